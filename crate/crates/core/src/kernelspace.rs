//! Graph-embedding distances and the kernel `K = exp(-Dist^2)`.
//!
//! Gram matrices can be exported in a small binary format
//!
//! ```text
//! magic  b"GKGM"
//! u32    version (1), little-endian
//! u64    m, little-endian
//! f64    m*m values, row-major, little-endian
//! ```
//!
//! or as CSV with a header row of graph ids.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{cosine, euclid, Matrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelVariant {
    #[default]
    Cosine,
    Euclidean,
}

impl std::str::FromStr for KernelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "euclidean" => Ok(Self::Euclidean),
            other => Err(Error::Config(format!("unknown kernel variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cosine => "cosine",
            Self::Euclidean => "euclidean",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub variant: KernelVariant,
    /// Added to each norm in the cosine distance.
    pub eps: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            variant: KernelVariant::Cosine,
            eps: 1e-12,
        }
    }
}

impl KernelConfig {
    pub fn new(variant: KernelVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }
}

/// Cosine distance (in `[0, 2]`) or Euclidean distance between two embeddings.
/// A zero vector is at cosine distance 1 from everything.
pub fn distance(e1: &[f64], e2: &[f64], cfg: &KernelConfig) -> f64 {
    match cfg.variant {
        KernelVariant::Cosine => (1.0 - cosine(e1, e2, cfg.eps)).clamp(0.0, 2.0),
        KernelVariant::Euclidean => euclid(e1, e2),
    }
}

/// `exp(-distance^2)`, in `(0, 1]`.
pub fn kernel(e1: &[f64], e2: &[f64], cfg: &KernelConfig) -> f64 {
    let d = distance(e1, e2, cfg);
    (-d * d).exp()
}

/// Differentiable batch distance and kernel matrices over the rows of `g_emb`.
/// The distance diagonal is exactly zero, so the kernel diagonal is exactly one.
pub fn batch_matrices(tape: &mut Tape, g_emb: Var, cfg: &KernelConfig) -> (Var, Var) {
    let d = match cfg.variant {
        KernelVariant::Cosine => tape.pairwise_cosine_distance(g_emb, cfg.eps),
        KernelVariant::Euclidean => tape.pairwise_euclidean_distance(g_emb),
    };
    let sq = tape.square(d);
    let neg = tape.scale(sq, -1.0);
    let k = tape.exp(neg);
    (d, k)
}

/// Value-only [`batch_matrices`].
pub fn batch_matrices_values(g_emb: &Matrix, cfg: &KernelConfig) -> (Matrix, Matrix) {
    let mut t = Tape::new();
    let e = t.leaf(g_emb.clone());
    let (d, k) = batch_matrices(&mut t, e, cfg);
    (t.value(d).clone(), t.value(k).clone())
}

/// Kernel values between every row of `a` and every row of `b`. Entries are
/// computed independently, so the parallel result equals the sequential one.
pub fn cross_gram(a: &Matrix, b: &Matrix, cfg: &KernelConfig) -> Matrix {
    let cols = b.rows();
    let data: Vec<f64> = (0..a.rows())
        .into_par_iter()
        .flat_map_iter(|i| (0..cols).map(move |j| kernel(a.row(i), b.row(j), cfg)))
        .collect();
    Matrix::from_vec(a.rows(), cols, data).expect("sized buffer")
}

/// Symmetric gram matrix over a set of graph embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub values: Matrix,
    pub ids: Vec<String>,
}

/// Numerical health of a gram matrix.
#[derive(Clone, Copy, Debug)]
pub struct GramReport {
    pub symmetry_error: f64,
    pub diagonal_error: f64,
    pub min_eigenvalue: f64,
    pub min_entry: f64,
    pub max_entry: f64,
}

impl GramReport {
    pub fn is_valid(&self) -> bool {
        self.symmetry_error <= 1e-10
            && self.diagonal_error <= 1e-10
            && self.min_eigenvalue >= -1e-6
            && self.min_entry >= 0.0
            && self.max_entry <= 1.0 + 1e-10
    }
}

const GRAM_MAGIC: &[u8; 4] = b"GKGM";
const GRAM_VERSION: u32 = 1;

impl GramMatrix {
    /// Gram matrix of the rows of `embeddings`. Unit diagonal by construction.
    pub fn from_embeddings(embeddings: &Matrix, ids: Vec<String>, cfg: &KernelConfig) -> Result<Self> {
        if ids.len() != embeddings.rows() {
            return Err(Error::Length {
                expected: embeddings.rows(),
                found: ids.len(),
            });
        }
        let mut values = cross_gram(embeddings, embeddings, cfg);
        for i in 0..values.rows() {
            values.set(i, i, 1.0);
        }
        Ok(Self { values, ids })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn report(&self) -> GramReport {
        gram_report(&self.values)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = self.len();
        let mut out = Vec::with_capacity(16 + 8 * m * m);
        out.extend_from_slice(GRAM_MAGIC);
        out.extend_from_slice(&GRAM_VERSION.to_le_bytes());
        out.extend_from_slice(&(m as u64).to_le_bytes());
        for v in self.values.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes the binary format. Graph ids are not stored there, so rows are
    /// named by index.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != GRAM_MAGIC {
            return Err(Error::Format("missing gram header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != GRAM_VERSION {
            return Err(Error::Version {
                expected: GRAM_VERSION,
                found: version,
            });
        }
        let m = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let expected = usize::try_from(m)
            .ok()
            .and_then(|m| m.checked_mul(m))
            .and_then(|mm| mm.checked_mul(8))
            .and_then(|b| b.checked_add(16))
            .ok_or_else(|| Error::Format(format!("gram size {m} overflows")))?;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "gram payload is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let m = m as usize;
        let data = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            values: Matrix::from_vec(m, m, data)?,
            ids: (0..m).map(|i| i.to_string()).collect(),
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut s = String::from("id");
        for id in &self.ids {
            check_csv_field(id)?;
            s.push(',');
            s.push_str(id);
        }
        s.push('\n');
        for (r, id) in self.ids.iter().enumerate() {
            s.push_str(id);
            for v in self.values.row(r) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty gram csv".into(),
        })?;
        let mut cols = header.split(',');
        if cols.next() != Some("id") {
            return Err(Error::Parse {
                line: 1,
                msg: "header must start with \"id\"".into(),
            });
        }
        let ids: Vec<String> = cols.map(str::to_string).collect();
        let m = ids.len();
        let mut data = Vec::with_capacity(m * m);
        let mut rows = 0;
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let id = fields.next().unwrap_or_default();
            if rows >= m || id != ids[rows] {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: format!("unexpected row id {id:?}"),
                });
            }
            let before = data.len();
            for f in fields {
                data.push(f.parse::<f64>().map_err(|e| Error::Parse {
                    line: n + 1,
                    msg: e.to_string(),
                })?);
            }
            if data.len() - before != m {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: format!("expected {m} values"),
                });
            }
            rows += 1;
        }
        if rows != m {
            return Err(Error::Parse {
                line: rows + 2,
                msg: format!("expected {m} rows, found {rows}"),
            });
        }
        Ok(Self {
            values: Matrix::from_vec(m, m, data)?,
            ids,
        })
    }
}

fn check_csv_field(s: &str) -> Result<()> {
    if s.contains([',', '\n', '\r', '"']) {
        return Err(Error::Format(format!("id {s:?} cannot be written to csv")));
    }
    Ok(())
}

/// Symmetry, diagonal and spectrum diagnostics for a square matrix.
pub fn gram_report(k: &Matrix) -> GramReport {
    let n = k.rows();
    let mut symmetry_error: f64 = 0.0;
    let mut diagonal_error: f64 = 0.0;
    for i in 0..n {
        diagonal_error = diagonal_error.max((k.get(i, i) - 1.0).abs());
        for j in 0..i {
            symmetry_error = symmetry_error.max((k.get(i, j) - k.get(j, i)).abs());
        }
    }
    GramReport {
        symmetry_error,
        diagonal_error,
        min_eigenvalue: min_eigenvalue(k),
        min_entry: k.data().iter().copied().fold(f64::INFINITY, f64::min),
        max_entry: k.data().iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Smallest eigenvalue of the symmetric part of `k`.
pub fn min_eigenvalue(k: &Matrix) -> f64 {
    if k.rows() == 0 {
        return 0.0;
    }
    let a = k.to_nalgebra();
    let sym = (&a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Nearest positive semidefinite matrix in Frobenius norm: the symmetric
/// part of `k` with negative eigenvalues set to zero.
pub fn clip_spectrum(k: &Matrix) -> Matrix {
    let a = k.to_nalgebra();
    let sym = (&a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let rebuilt = &eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let n = k.rows();
    Matrix::from_vec(n, n, (0..n * n).map(|i| rebuilt[(i / n, i % n)]).collect()).expect("square")
}
