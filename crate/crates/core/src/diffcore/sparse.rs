use crate::diffcore::Matrix;
use crate::error::{Error, Result};

/// Square sparse matrix in compressed sparse row form.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are summed;
    /// columns within a row end up sorted.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < n && c < n, "triplet ({r}, {c}) out of range for n={n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n {
            indptr[r + 1] += indptr[r];
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzeros of row `r` as `(col, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).map(|(_, v)| v).sum()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                m.set(r, c, m.get(r, c) + v);
            }
        }
        m
    }

    /// Scales each row by the reciprocal of its sum.
    pub fn row_normalized(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.n {
            let span = self.indptr[r]..self.indptr[r + 1];
            let s: f64 = self.values[span.clone()].iter().sum();
            if s != 0.0 {
                for v in &mut out.values[span] {
                    *v /= s;
                }
            }
        }
        out
    }

    /// `self * dense`.
    pub fn matmul(&self, dense: &Matrix) -> Result<Matrix> {
        if dense.rows() != self.n {
            return Err(Error::Shape {
                op: "spmm",
                lhs: (self.n, self.n),
                rhs: dense.shape(),
            });
        }
        let mut out = Matrix::zeros(self.n, dense.cols());
        for r in 0..self.n {
            let orow = out.row_mut(r);
            for (c, v) in self.row(r) {
                for (o, x) in orow.iter_mut().zip(dense.row(c)) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * dense`.
    pub fn t_matmul(&self, dense: &Matrix) -> Result<Matrix> {
        if dense.rows() != self.n {
            return Err(Error::Shape {
                op: "spmm_t",
                lhs: (self.n, self.n),
                rhs: dense.shape(),
            });
        }
        let mut out = Matrix::zeros(self.n, dense.cols());
        for r in 0..self.n {
            let grow = dense.row(r);
            for (c, v) in self.row(r) {
                for (o, g) in out.row_mut(c).iter_mut().zip(grow) {
                    *o += v * g;
                }
            }
        }
        Ok(out)
    }
}
