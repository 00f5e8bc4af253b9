//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation evaluates eagerly and appends a node holding its value and
//! the operation that produced it. [`Tape::backward`] then walks the nodes in
//! reverse order and accumulates adjoints. Scalars are 1x1 matrices.
//!
//! ```
//! use graphkernel::diffcore::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Matrix::from_rows(&[[3.0]]));
//! let y = tape.square(x);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(tape.value(y).item(), 9.0);
//! assert_eq!(grads.wrt(x).item(), 6.0);
//! ```

use std::rc::Rc;

use crate::diffcore::sparsemax::{segment_spans, softmax, sparsemax_into};
use crate::diffcore::{dot, norm, CsrMatrix, Matrix};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    SpMM(Rc<CsrMatrix>, Var),
    GatherRows(Var, Rc<[usize]>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    MulConst(Var, Rc<Matrix>),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Sqrt(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    ConcatCols(Vec<Var>),
    Sparsemax(Var),
    SegmentSoftmax(Var, Rc<[usize]>),
    SegmentWeightedSum {
        weights: Var,
        x: Var,
        segments: Rc<[usize]>,
        count: usize,
    },
    RowCosine(Var, Var, f64),
    PairwiseCosine(Var, f64),
    PairwiseEuclidean(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::SpMM(..) => "spmm",
            Op::GatherRows(..) => "gather_rows",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MulConst(..) => "mul_const",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::ConcatCols(..) => "concat_cols",
            Op::Sparsemax(..) => "sparsemax",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::SegmentWeightedSum { .. } => "segment_weighted_sum",
            Op::RowCosine(..) => "row_cosine",
            Op::PairwiseCosine(..) => "pairwise_cosine_distance",
            Op::PairwiseEuclidean(..) => "pairwise_euclidean_distance",
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Recorded computation graph.
pub struct Tape {
    nodes: Vec<Node>,
    checked: bool,
    fault: Option<String>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros if `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            checked: false,
            fault: None,
        }
    }

    /// A tape that records the first operation producing NaN or infinity.
    pub fn checked() -> Self {
        Self {
            checked: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// `Err` naming the first non-finite op, if the tape is checked and one occurred.
    pub fn check(&self) -> Result<()> {
        match &self.fault {
            Some(name) => Err(Error::NonFinite(name.clone())),
            None => Ok(()),
        }
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        if self.checked && self.fault.is_none() && !value.is_finite() {
            self.fault = Some(op.name().to_string());
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = self.compute(&op)?;
        Ok(self.push(value, op))
    }

    fn record_infallible(&mut self, op: Op) -> Var {
        self.record(op).expect("infallible op")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape { op, lhs: sa, rhs: sb });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMulT(a, b))
    }

    /// Constant sparse matrix times `x`.
    pub fn spmm(&mut self, a: Rc<CsrMatrix>, x: Var) -> Result<Var> {
        self.record(Op::SpMM(a, x))
    }

    /// Row `idx[i]` of `x` as row `i` of the output. Equivalent to a one-hot
    /// matrix product.
    pub fn gather_rows(&mut self, x: Var, idx: Rc<[usize]>) -> Result<Var> {
        let rows = self.value(x).rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: self.value(x).shape(),
                rhs: (bad, 0),
            });
        }
        self.record(Op::GatherRows(x, idx))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        self.record(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        self.record(Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.record_infallible(Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.record_infallible(Op::AddScalar(a, c))
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, a: Var, c: Rc<Matrix>) -> Result<Var> {
        let sa = self.value(a).shape();
        if sa != c.shape() {
            return Err(Error::Shape {
                op: "mul_const",
                lhs: sa,
                rhs: c.shape(),
            });
        }
        self.record(Op::MulConst(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.record_infallible(Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.record_infallible(Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.record_infallible(Op::Exp(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.record_infallible(Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.record_infallible(Op::Square(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.record_infallible(Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.record_infallible(Op::Sum(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat_cols"));
        }
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape(),
                    rhs: self.value(p).shape(),
                });
            }
        }
        self.record(Op::ConcatCols(parts.to_vec()))
    }

    /// Row-wise sparsemax.
    pub fn sparsemax(&mut self, a: Var) -> Result<Var> {
        if self.value(a).cols() == 0 {
            return Err(Error::Empty("sparsemax row"));
        }
        self.record(Op::Sparsemax(a))
    }

    /// Softmax of an `n x 1` column within each segment.
    pub fn segment_softmax(&mut self, a: Var, segments: Rc<[usize]>) -> Result<Var> {
        let s = self.value(a).shape();
        if s != (segments.len(), 1) {
            return Err(Error::Shape {
                op: "segment_softmax",
                lhs: s,
                rhs: (segments.len(), 1),
            });
        }
        self.record(Op::SegmentSoftmax(a, segments))
    }

    /// Output row `g` is `sum_{i in segment g} weights[i] * x[i]`.
    pub fn segment_weighted_sum(
        &mut self,
        weights: Var,
        x: Var,
        segments: Rc<[usize]>,
        count: usize,
    ) -> Result<Var> {
        let (sw, sx) = (self.value(weights).shape(), self.value(x).shape());
        if sw != (segments.len(), 1) || sx.0 != segments.len() {
            return Err(Error::Shape {
                op: "segment_weighted_sum",
                lhs: sw,
                rhs: sx,
            });
        }
        if segments.iter().any(|&s| s >= count) {
            return Err(Error::Config("segment id out of range".into()));
        }
        self.record(Op::SegmentWeightedSum {
            weights,
            x,
            segments,
            count,
        })
    }

    /// Cosine similarity of corresponding rows, as an `n x 1` column. Norms are
    /// guarded by `eps`.
    pub fn row_cosine(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        self.same_shape("row_cosine", a, b)?;
        self.record(Op::RowCosine(a, b, eps))
    }

    /// `m x m` matrix of cosine distances between the rows of `a`.
    pub fn pairwise_cosine_distance(&mut self, a: Var, eps: f64) -> Var {
        self.record_infallible(Op::PairwiseCosine(a, eps))
    }

    /// `m x m` matrix of Euclidean distances between the rows of `a`.
    pub fn pairwise_euclidean_distance(&mut self, a: Var) -> Var {
        self.record_infallible(Op::PairwiseEuclidean(a))
    }

    /// Recomputes every non-leaf node from the stored leaves and reports whether
    /// each value is bit-identical to the recorded one.
    pub fn replay_matches(&self) -> bool {
        self.nodes.iter().all(|n| match n.op {
            Op::Leaf => true,
            _ => self
                .compute(&n.op)
                .map(|v| {
                    v.shape() == n.value.shape()
                        && v.data()
                            .iter()
                            .zip(n.value.data())
                            .all(|(a, b)| a.to_bits() == b.to_bits())
                })
                .unwrap_or(false),
        })
    }

    fn compute(&self, op: &Op) -> Result<Matrix> {
        let v = |x: &Var| self.value(*x);
        Ok(match op {
            Op::Leaf => unreachable!("leaves are pushed directly"),
            Op::MatMul(a, b) => v(a).matmul(v(b))?,
            Op::MatMulT(a, b) => v(a).matmul_t(v(b))?,
            Op::SpMM(s, x) => s.matmul(v(x))?,
            Op::GatherRows(x, idx) => v(x).select_rows(idx),
            Op::Add(a, b) => v(a).add(v(b))?,
            Op::Sub(a, b) => v(a).sub(v(b))?,
            Op::Mul(a, b) => v(a).hadamard(v(b))?,
            Op::Div(a, b) => zip3(v(a), v(b), v(b), |x, y, _| x / y),
            Op::Scale(a, c) => v(a).scale(*c),
            Op::AddScalar(a, c) => v(a).map(|x| x + c),
            Op::MulConst(a, c) => v(a).hadamard(c)?,
            Op::Relu(a) => v(a).map(|x| x.max(0.0)),
            Op::Tanh(a) => v(a).map(f64::tanh),
            Op::Exp(a) => v(a).map(f64::exp),
            Op::Sqrt(a) => v(a).map(f64::sqrt),
            Op::Square(a) => v(a).map(|x| x * x),
            Op::Clamp(a, lo, hi) => v(a).map(|x| x.clamp(*lo, *hi)),
            Op::Sum(a) => Matrix::scalar(v(a).sum()),
            Op::ConcatCols(parts) => {
                let rows = v(&parts[0]).rows();
                let cols: usize = parts.iter().map(|p| v(p).cols()).sum();
                let mut out = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let mut off = 0;
                    for p in parts {
                        let src = v(p).row(r);
                        out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                        off += src.len();
                    }
                }
                out
            }
            Op::Sparsemax(a) => {
                let z = v(a);
                let mut out = Matrix::zeros(z.rows(), z.cols());
                for r in 0..z.rows() {
                    sparsemax_into(z.row(r), out.row_mut(r));
                }
                out
            }
            Op::SegmentSoftmax(a, seg) => Matrix::column(&softmax(v(a).data(), Some(seg))),
            Op::SegmentWeightedSum {
                weights,
                x,
                segments,
                count,
            } => {
                let (w, x) = (v(weights), v(x));
                let mut out = Matrix::zeros(*count, x.cols());
                for (i, &g) in segments.iter().enumerate() {
                    let wi = w.data()[i];
                    for (o, h) in out.row_mut(g).iter_mut().zip(x.row(i)) {
                        *o += wi * h;
                    }
                }
                out
            }
            Op::RowCosine(a, b, eps) => {
                let (a, b) = (v(a), v(b));
                let vals: Vec<f64> = (0..a.rows())
                    .map(|r| cosine(a.row(r), b.row(r), *eps))
                    .collect();
                Matrix::column(&vals)
            }
            Op::PairwiseCosine(a, eps) => {
                let e = v(a);
                let m = e.rows();
                let mut out = Matrix::zeros(m, m);
                for i in 0..m {
                    for j in 0..m {
                        if i != j {
                            let d = 1.0 - cosine(e.row(i), e.row(j), *eps);
                            out.set(i, j, d.clamp(0.0, 2.0));
                        }
                    }
                }
                out
            }
            Op::PairwiseEuclidean(a) => {
                let e = v(a);
                let m = e.rows();
                let mut out = Matrix::zeros(m, m);
                for i in 0..m {
                    for j in 0..m {
                        if i != j {
                            out.set(i, j, euclid(e.row(i), e.row(j)));
                        }
                    }
                }
                out
            }
        })
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.check()?;
        let out_shape = self.value(output).shape();
        if out_shape != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                lhs: out_shape,
                rhs: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b))?;
                    let gb = self.value(*a).t_matmul(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    // y = a b^T: da = g b, db = g^T a
                    let ga = g.matmul(self.value(*b))?;
                    let gb = g.t_matmul(self.value(*a))?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SpMM(s, x) => accumulate(&mut grads, *x, s.t_matmul(&g)?),
                Op::GatherRows(x, idx_rows) => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for (r, &src) in idx_rows.iter().enumerate() {
                        for (o, gi) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += gi;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.hadamard(self.value(*b))?;
                    let gb = g.hadamard(self.value(*a))?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = zip3(&g, bv, bv, |g, b, _| g / b);
                    let gb = zip3(&g, av, bv, |g, a, b| -g * a / (b * b));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::AddScalar(a, _) => accumulate(&mut grads, *a, g),
                Op::MulConst(a, c) => accumulate(&mut grads, *a, g.hadamard(c)?),
                Op::Relu(a) => {
                    let ga = zip3(&g, self.value(*a), y, |g, x, _| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = zip3(&g, y, y, |g, t, _| g * (1.0 - t * t));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, g.hadamard(y)?),
                Op::Sqrt(a) => {
                    let ga = zip3(&g, y, y, |g, s, _| if s > 0.0 { g / (2.0 * s) } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let ga = zip3(&g, self.value(*a), y, |g, x, _| 2.0 * g * x);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let ga = zip3(&g, self.value(*a), y, |g, x, _| {
                        if x < *lo || x > *hi {
                            0.0
                        } else {
                            g
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let s = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(s.0, s.1, g.item()));
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let mut gp = Matrix::zeros(pv.rows(), pv.cols());
                        for r in 0..pv.rows() {
                            gp.row_mut(r)
                                .copy_from_slice(&g.row(r)[off..off + pv.cols()]);
                        }
                        off += pv.cols();
                        accumulate(&mut grads, *p, gp);
                    }
                }
                Op::Sparsemax(a) => {
                    // Generalized Jacobian: on the support, subtract the mean
                    // upstream gradient; zero elsewhere.
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (p, gr) = (y.row(r), g.row(r));
                        let (mut total, mut k) = (0.0, 0usize);
                        for (pi, gi) in p.iter().zip(gr) {
                            if *pi > 0.0 {
                                total += gi;
                                k += 1;
                            }
                        }
                        let mean = if k > 0 { total / k as f64 } else { 0.0 };
                        for ((o, pi), gi) in ga.row_mut(r).iter_mut().zip(p).zip(gr) {
                            if *pi > 0.0 {
                                *o = gi - mean;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SegmentSoftmax(a, seg) => {
                    let (p, gd) = (y.data(), g.data());
                    let mut ga = vec![0.0; p.len()];
                    for (s, e) in segment_spans(seg) {
                        let inner: f64 = (s..e).map(|i| p[i] * gd[i]).sum();
                        for i in s..e {
                            ga[i] = p[i] * (gd[i] - inner);
                        }
                    }
                    accumulate(&mut grads, *a, Matrix::column(&ga));
                }
                Op::SegmentWeightedSum {
                    weights, x, segments, ..
                } => {
                    let (w, xv) = (self.value(*weights), self.value(*x));
                    let mut gw = vec![0.0; segments.len()];
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for (i, &s) in segments.iter().enumerate() {
                        gw[i] = dot(g.row(s), xv.row(i));
                        let wi = w.data()[i];
                        for (o, gs) in gx.row_mut(i).iter_mut().zip(g.row(s)) {
                            *o = wi * gs;
                        }
                    }
                    accumulate(&mut grads, *weights, Matrix::column(&gw));
                    accumulate(&mut grads, *x, gx);
                }
                Op::RowCosine(a, b, eps) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                    for r in 0..av.rows() {
                        let gr = g.data()[r];
                        cosine_grad(av.row(r), bv.row(r), *eps, gr, ga.row_mut(r), gb.row_mut(r));
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::PairwiseCosine(a, eps) => {
                    let e = self.value(*a);
                    let mut ge = Matrix::zeros(e.rows(), e.cols());
                    let mut gi = vec![0.0; e.cols()];
                    let mut gj = vec![0.0; e.cols()];
                    for i in 0..e.rows() {
                        for j in 0..e.rows() {
                            let d = y.get(i, j);
                            if i == j || d <= 0.0 || d >= 2.0 {
                                continue;
                            }
                            gi.iter_mut().for_each(|v| *v = 0.0);
                            gj.iter_mut().for_each(|v| *v = 0.0);
                            // D = 1 - cos, so dD = -dcos
                            cosine_grad(e.row(i), e.row(j), *eps, -g.get(i, j), &mut gi, &mut gj);
                            for (o, v) in ge.row_mut(i).iter_mut().zip(&gi) {
                                *o += v;
                            }
                            for (o, v) in ge.row_mut(j).iter_mut().zip(&gj) {
                                *o += v;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ge);
                }
                Op::PairwiseEuclidean(a) => {
                    let e = self.value(*a);
                    let mut ge = Matrix::zeros(e.rows(), e.cols());
                    for i in 0..e.rows() {
                        for j in 0..e.rows() {
                            let d = y.get(i, j);
                            if i == j || d == 0.0 {
                                continue;
                            }
                            let c = g.get(i, j) / d;
                            for k in 0..e.cols() {
                                let diff = c * (e.get(i, k) - e.get(j, k));
                                ge.row_mut(i)[k] += diff;
                                ge.row_mut(j)[k] -= diff;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ge);
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.axpy(1.0, &g),
        slot @ None => *slot = Some(g),
    }
}

fn zip3(g: &Matrix, a: &Matrix, b: &Matrix, f: impl Fn(f64, f64, f64) -> f64) -> Matrix {
    let data = g
        .data()
        .iter()
        .zip(a.data())
        .zip(b.data())
        .map(|((&g, &a), &b)| f(g, a, b))
        .collect();
    Matrix::from_vec(g.rows(), g.cols(), data).expect("matching shapes")
}

/// `<a, b> / ((|a| + eps)(|b| + eps))`.
pub fn cosine(a: &[f64], b: &[f64], eps: f64) -> f64 {
    dot(a, b) / ((norm(a) + eps) * (norm(b) + eps))
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Adds `upstream * d cosine(a, b) / d a` into `ga` (likewise `gb`).
fn cosine_grad(a: &[f64], b: &[f64], eps: f64, upstream: f64, ga: &mut [f64], gb: &mut [f64]) {
    let (na, nb) = (norm(a), norm(b));
    let den = (na + eps) * (nb + eps);
    let c = dot(a, b) / den;
    let ka = if na > 0.0 { c / (na * (na + eps)) } else { 0.0 };
    let kb = if nb > 0.0 { c / (nb * (nb + eps)) } else { 0.0 };
    for k in 0..a.len() {
        ga[k] += upstream * (b[k] / den - ka * a[k]);
        gb[k] += upstream * (a[k] / den - kb * b[k]);
    }
}
