//! Stacked graph convolutions with hierarchical concatenation.
//!
//! Layer `k` computes `H^{k+1} = ReLU(Â H^k W^k)` with `Â = D̃⁻¹(A + I)` and
//! `H^0` the one-hot code matrix. The outputs of all `t` layers are
//! concatenated and projected back to `d` columns through `W_concat`.

use std::rc::Rc;

use rand::Rng;

use crate::diffcore::{CsrMatrix, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::graphdata::{normalized_adjacency, GraphBatch};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// `W^0` is `c x d`; the remaining layers are `d x d`.
    pub layers: Vec<Matrix>,
    /// `(t * d) x d`.
    pub concat: Matrix,
}

/// Glorot-uniform initialization, `U(-r, r)` with `r = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-r..r)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

impl EncoderParams {
    pub fn init<R: Rng>(vocab_size: usize, dim: usize, depth: usize, rng: &mut R) -> Result<Self> {
        if depth < 1 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if vocab_size == 0 || dim == 0 {
            return Err(Error::Config("vocabulary size and dimension must be positive".into()));
        }
        let mut layers = Vec::with_capacity(depth);
        layers.push(glorot_uniform(vocab_size, dim, rng));
        for _ in 1..depth {
            layers.push(glorot_uniform(dim, dim, rng));
        }
        let concat = glorot_uniform(depth * dim, dim, rng);
        Ok(Self { layers, concat })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.concat.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (c, d, t) = (self.vocab_size(), self.dim(), self.depth());
        let bad = |what: &'static str, m: &Matrix, want: (usize, usize)| Error::Shape {
            op: what,
            lhs: m.shape(),
            rhs: want,
        };
        if self.layers[0].shape() != (c, d) {
            return Err(bad("encoder W^0", &self.layers[0], (c, d)));
        }
        for w in &self.layers[1..] {
            if w.shape() != (d, d) {
                return Err(bad("encoder W^k", w, (d, d)));
            }
        }
        if self.concat.shape() != (t * d, d) {
            return Err(bad("encoder W_concat", &self.concat, (t * d, d)));
        }
        if !self.layers.iter().chain([&self.concat]).all(Matrix::is_finite) {
            return Err(Error::NonFinite("encoder parameters".into()));
        }
        Ok(())
    }
}

/// Tape handles for [`EncoderParams`].
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub layers: Vec<Var>,
    pub concat: Var,
}

impl EncoderVars {
    pub fn register(tape: &mut Tape, params: &EncoderParams) -> Self {
        Self {
            layers: params.layers.iter().map(|w| tape.leaf(w.clone())).collect(),
            concat: tape.leaf(params.concat.clone()),
        }
    }
}

/// One convolution, `ReLU(Â H W)`.
pub fn gcn_layer(tape: &mut Tape, h: Var, normadj: Rc<CsrMatrix>, w: Var) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    let agg = tape.spmm(normadj, hw)?;
    Ok(tape.relu(agg))
}

/// Node embeddings `H_final` for every node of the batch.
///
/// The first layer gathers rows of `W^0` by code id rather than multiplying
/// by the dense one-hot matrix; the two are equal.
pub fn encode_on(tape: &mut Tape, batch: &GraphBatch, normadj: Rc<CsrMatrix>, vars: &EncoderVars) -> Result<Var> {
    let codes: Rc<[usize]> = batch.codes.clone().into();
    let xw = tape.gather_rows(vars.layers[0], codes)?;
    let agg = tape.spmm(normadj.clone(), xw)?;
    let mut h = tape.relu(agg);
    let mut outputs = vec![h];
    for &w in &vars.layers[1..] {
        h = gcn_layer(tape, h, normadj.clone(), w)?;
        outputs.push(h);
    }
    let stacked = if outputs.len() == 1 {
        outputs[0]
    } else {
        tape.concat_cols(&outputs)?
    };
    let projected = tape.matmul(stacked, vars.concat)?;
    Ok(tape.relu(projected))
}

/// Value-only convenience wrapper around [`encode_on`].
pub fn encode(batch: &GraphBatch, params: &EncoderParams) -> Result<Matrix> {
    if batch.vocab_size != params.vocab_size() {
        return Err(Error::Config(format!(
            "batch vocabulary {} does not match encoder vocabulary {}",
            batch.vocab_size,
            params.vocab_size()
        )));
    }
    let mut tape = Tape::new();
    let vars = EncoderVars::register(&mut tape, params);
    let normadj = Rc::new(normalized_adjacency(batch));
    let h = encode_on(&mut tape, batch, normadj, &vars)?;
    Ok(tape.value(h).clone())
}
