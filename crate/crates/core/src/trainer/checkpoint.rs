//! Binary checkpoint container.
//!
//! ```text
//! b"GKCKPT\0\0"                 magic
//! u32                           version
//! u8                            precision tag (8 = f64)
//! str                           training config (JSON)
//! str                           model config (JSON)
//! u64, str*                     vocabulary
//! u64                           vocabulary hash
//! u32, array*                   named parameter arrays, then training embeddings
//! svm                           bias, C, train size, iterations, support, coef
//! u64, (str, u8)*               training ids and labels
//! [u8; 32]                      SHA-256 of everything above
//! ```
//!
//! Integers are little-endian; `str` is a u32 byte length followed by UTF-8;
//! `array` is a name, u64 rows, u64 cols and row-major f64 values.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::graphdata::Vocabulary;
use crate::model::{ModelConfig, ModelParams};
use crate::svm::SvmModel;
use crate::trainer::TrainConfig;

const MAGIC: &[u8; 8] = b"GKCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const EMBEDDINGS: &str = "train_embeddings";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn tag(self) -> u8 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            4 => Ok(Precision::F32),
            8 => Ok(Precision::F64),
            t => Err(Error::Format(format!("unknown precision tag {t}"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Everything needed to embed new graphs and classify them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub svm: SvmModel,
    pub train_ids: Vec<String>,
    pub train_labels: Vec<u8>,
    /// Embeddings of the training graphs; kernel rows for new graphs are
    /// computed against these.
    pub train_embeddings: Matrix,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn array(&mut self, name: &str, m: &Matrix) {
        self.str(name);
        self.u64(m.rows() as u64);
        self.u64(m.cols() as u64);
        for &v in m.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("unexpected end of checkpoint at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// A count of items each at least `min_size` bytes long, rejected early if
    /// the rest of the buffer cannot hold them.
    fn count(&mut self, min_size: usize) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n.checked_mul(min_size).is_some_and(|b| b <= self.remaining()))
            .ok_or_else(|| Error::Format(format!("implausible item count {n}")))
    }
    fn str(&mut self) -> Result<&'a str> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|e| Error::Format(e.to_string()))
    }
    fn array(&mut self) -> Result<(&'a str, Matrix)> {
        let name = self.str()?;
        let rows = self.u64()?;
        let cols = self.u64()?;
        let len = usize::try_from(rows)
            .ok()
            .zip(usize::try_from(cols).ok())
            .and_then(|(r, c)| r.checked_mul(c))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= self.remaining()))
            .ok_or_else(|| Error::Format(format!("array {name:?} of {rows}x{cols} does not fit")))?;
        let data = self
            .take(len * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Matrix::from_vec(rows as usize, cols as usize, data)?))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u8(Precision::F64.tag());
        w.str(&serde_json::to_string(&self.train)?);
        w.str(&serde_json::to_string(&self.model)?);
        w.u64(self.vocab.len() as u64);
        for c in self.vocab.codes() {
            w.str(c);
        }
        w.u64(self.vocab.hash());
        let blocks = self.params.blocks();
        w.u32(blocks.len() as u32 + 1);
        for (name, m) in &blocks {
            w.array(name, m);
        }
        w.array(EMBEDDINGS, &self.train_embeddings);

        w.f64(self.svm.bias);
        w.f64(self.svm.c);
        w.u64(self.svm.train_size as u64);
        w.u64(self.svm.iterations as u64);
        w.u64(self.svm.support.len() as u64);
        for (&i, &c) in self.svm.support.iter().zip(&self.svm.coef) {
            w.u64(i as u64);
            w.f64(c);
        }

        if self.train_ids.len() != self.train_labels.len() {
            return Err(Error::Length {
                expected: self.train_ids.len(),
                found: self.train_labels.len(),
            });
        }
        w.u64(self.train_ids.len() as u64);
        for (id, &l) in self.train_ids.iter().zip(&self.train_labels) {
            w.str(id);
            w.u8(l);
        }
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_bytes_as(bytes, Precision::F64)
    }

    /// Decodes a checkpoint, failing unless it stores `expected` precision.
    /// Values are never converted between precisions.
    pub fn from_bytes_as(bytes: &[u8], expected: Precision) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(Error::Checksum);
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum);
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let found = Precision::from_tag(r.u8()?)?;
        if found != expected {
            return Err(Error::Precision {
                expected: expected.name(),
                found: found.name(),
            });
        }
        if found != Precision::F64 {
            return Err(Error::Format("only f64 checkpoints are supported".into()));
        }

        let train: TrainConfig = serde_json::from_str(r.str()?)?;
        let model: ModelConfig = serde_json::from_str(r.str()?)?;
        let n_codes = r.count(4)?;
        let codes = (0..n_codes).map(|_| r.str().map(str::to_string)).collect::<Result<Vec<_>>>()?;
        let vocab = Vocabulary::new(codes)?;
        let hash = r.u64()?;
        if hash != vocab.hash() {
            return Err(Error::VocabularyMismatch {
                expected: hash,
                found: vocab.hash(),
            });
        }

        let n_arrays = r.u32()? as usize;
        if n_arrays < 4 {
            return Err(Error::Format(format!("expected at least 4 arrays, found {n_arrays}")));
        }
        let mut blocks = Vec::with_capacity(n_arrays.min(64));
        for _ in 0..n_arrays - 1 {
            blocks.push(r.array()?.1);
        }
        let (name, train_embeddings) = r.array()?;
        if name != EMBEDDINGS {
            return Err(Error::Format(format!("expected {EMBEDDINGS}, found {name:?}")));
        }
        let params = ModelParams::from_blocks(blocks)?;

        let bias = r.f64()?;
        let c = r.f64()?;
        let train_size = r.u64()? as usize;
        let iterations = r.u64()? as usize;
        let n_support = r.count(16)?;
        let mut support = Vec::with_capacity(n_support);
        let mut coef = Vec::with_capacity(n_support);
        for _ in 0..n_support {
            let i = r.u64()? as usize;
            if i >= train_size {
                return Err(Error::Format(format!("support index {i} out of range")));
            }
            support.push(i);
            coef.push(r.f64()?);
        }
        let svm = SvmModel {
            support,
            coef,
            bias,
            c,
            train_size,
            iterations,
        };

        let n_train = r.count(5)?;
        let mut train_ids = Vec::with_capacity(n_train);
        let mut train_labels = Vec::with_capacity(n_train);
        for _ in 0..n_train {
            train_ids.push(r.str()?.to_string());
            train_labels.push(r.u8()?);
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }

        let ck = Checkpoint {
            train,
            model,
            vocab,
            params,
            svm,
            train_ids,
            train_labels,
            train_embeddings,
        };
        ck.validate()?;
        Ok(ck)
    }

    /// Cross-field consistency checks.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let p = &self.params;
        if p.encoder.vocab_size() != m.vocab_size
            || m.vocab_size != self.vocab.len()
            || p.encoder.dim() != m.dim
            || p.encoder.depth() != m.layers
            || p.clusters.clusters() != m.clusters
        {
            return Err(Error::Format("parameter shapes disagree with the model config".into()));
        }
        let n = self.train_ids.len();
        if self.train_embeddings.shape() != (n, m.dim) || self.svm.train_size != n {
            return Err(Error::Format("training reference sizes disagree".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes()?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
