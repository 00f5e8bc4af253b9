//! Batch objectives: contrastive distance loss, kernel-target alignment,
//! and their unit-weighted combination with the reconstruction and squared
//! hinge terms.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// `Y_ij = 1` iff graphs `i` and `j` share a label.
pub fn label_agreement(labels: &[u8]) -> Matrix {
    let n = labels.len();
    let mut y = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                y.set(i, j, 1.0);
            }
        }
    }
    y
}

fn check_square(op: &'static str, tape: &Tape, a: Var, y: &Matrix) -> Result<()> {
    let shape = tape.value(a).shape();
    if shape != y.shape() || shape.0 != shape.1 {
        return Err(Error::Shape {
            op,
            lhs: shape,
            rhs: y.shape(),
        });
    }
    Ok(())
}

/// `(1/B) sum_{i,j} (1 - Y_ij) max(0, margin - D_ij)^2 + Y_ij D_ij` over
/// all ordered pairs.
pub fn contrastive(tape: &mut Tape, d: Var, y: &Matrix, margin: f64) -> Result<Var> {
    check_square("contrastive", tape, d, y)?;
    if margin.is_nan() || margin <= 0.0 {
        return Err(Error::Config(format!("margin must be positive, got {margin}")));
    }
    let b = y.rows() as f64;
    let not_y = Rc::new(y.map(|v| 1.0 - v));
    let y = Rc::new(y.clone());

    let neg = tape.scale(d, -1.0);
    let gap = tape.add_scalar(neg, margin);
    let hinge = tape.relu(gap);
    let hinge = tape.square(hinge);
    let apart = tape.mul_const(hinge, not_y)?;
    let together = tape.mul_const(d, y)?;
    let both = tape.add(apart, together)?;
    let total = tape.sum(both);
    Ok(tape.scale(total, 1.0 / b))
}

/// `(1/B) sqrt(2 - 2 <K,Y> / sqrt(<K,K> <Y,Y>))`, radicand clamped to `[0, 2]`.
pub fn alignment(tape: &mut Tape, k: Var, y: &Matrix) -> Result<Var> {
    check_square("alignment", tape, k, y)?;
    if tape.value(k).data().iter().all(|&v| v == 0.0) {
        return Err(Error::NonFinite("alignment of an all-zero kernel is undefined".into()));
    }
    let yy = y.data().iter().map(|v| v * v).sum::<f64>();
    if yy == 0.0 {
        return Err(Error::Config("label agreement matrix is all zero".into()));
    }
    let b = y.rows() as f64;
    let ky = tape.mul_const(k, Rc::new(y.clone()))?;
    let ky = tape.sum(ky);
    let kk = tape.square(k);
    let kk = tape.sum(kk);
    let kkyy = tape.scale(kk, yy);
    let denom = tape.sqrt(kkyy);
    let ratio = tape.div(ky, denom)?;
    let r = tape.scale(ratio, -2.0);
    let r = tape.add_scalar(r, 2.0);
    let r = tape.clamp(r, 0.0, 2.0);
    let r = tape.sqrt(r);
    Ok(tape.scale(r, 1.0 / b))
}

/// `(1/C) beta^T K beta + sum_i max(0, 1 - y_i (K beta)_i)^2` with `beta`
/// held constant, so gradients reach only `K`.
pub fn svm_loss(tape: &mut Tape, k: Var, signs: &[f64], beta: &[f64], c: f64) -> Result<Var> {
    let n = tape.value(k).rows();
    if signs.len() != n || beta.len() != n || tape.value(k).cols() != n {
        return Err(Error::Shape {
            op: "svm_loss",
            lhs: tape.value(k).shape(),
            rhs: (signs.len(), beta.len()),
        });
    }
    let beta_col = Rc::new(Matrix::column(beta));
    let beta_var = tape.leaf((*beta_col).clone());
    let kb = tape.matmul(k, beta_var)?;
    let quad = tape.mul_const(kb, beta_col)?;
    let quad = tape.sum(quad);
    let reg = tape.scale(quad, 1.0 / c);
    let margins = tape.mul_const(kb, Rc::new(Matrix::column(signs)))?;
    let slack = tape.scale(margins, -1.0);
    let slack = tape.add_scalar(slack, 1.0);
    let slack = tape.relu(slack);
    let slack = tape.square(slack);
    let hinge = tape.sum(slack);
    tape.add(reg, hinge)
}

/// Per-term multipliers for [`total_loss`]. All one by default.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub contrastive: f64,
    pub alignment: f64,
    pub recon: f64,
    pub svm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            contrastive: 1.0,
            alignment: 1.0,
            recon: 1.0,
            svm: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub contrastive: f64,
    pub alignment: f64,
    pub recon: f64,
    pub svm: f64,
    pub total: f64,
}

impl LossReport {
    /// Running mean helper: adds `other` scaled by `w`.
    pub fn accumulate(&mut self, other: &LossReport, w: f64) {
        self.contrastive += w * other.contrastive;
        self.alignment += w * other.alignment;
        self.recon += w * other.recon;
        self.svm += w * other.svm;
        self.total += w * other.total;
    }
}

/// Tape handles of the individual terms and their weighted sum.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub contrastive: Var,
    pub alignment: Var,
    pub recon: Var,
    pub svm: Var,
    pub total: Var,
}

/// Inputs to [`total_loss`] that are already on the tape or fixed for the batch.
pub struct LossInputs<'a> {
    pub distances: Var,
    pub kernel: Var,
    pub recon: Var,
    pub labels: &'a [u8],
    pub beta: &'a [f64],
    pub svm_c: f64,
    pub margin: f64,
}

/// Maps labels `{1, 0}` to signs `{+1, -1}`.
pub fn label_signs(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect()
}

pub fn total_loss(tape: &mut Tape, inputs: &LossInputs<'_>, weights: &LossWeights) -> Result<(LossVars, LossReport)> {
    let y = label_agreement(inputs.labels);
    let contrastive = contrastive(tape, inputs.distances, &y, inputs.margin)?;
    let alignment = alignment(tape, inputs.kernel, &y)?;
    let svm = svm_loss(
        tape,
        inputs.kernel,
        &label_signs(inputs.labels),
        inputs.beta,
        inputs.svm_c,
    )?;
    let recon = inputs.recon;

    let terms = [
        ("contrastive", contrastive, weights.contrastive),
        ("alignment", alignment, weights.alignment),
        ("recon", recon, weights.recon),
        ("svm", svm, weights.svm),
    ];
    for (name, v, _) in terms {
        if !tape.value(v).item().is_finite() {
            return Err(Error::NonFinite(format!("{name} loss term")));
        }
    }
    let mut total = tape.scale(contrastive, weights.contrastive);
    for &(_, v, w) in &terms[1..] {
        let scaled = tape.scale(v, w);
        total = tape.add(total, scaled)?;
    }
    let report = LossReport {
        contrastive: tape.value(contrastive).item(),
        alignment: tape.value(alignment).item(),
        recon: tape.value(recon).item(),
        svm: tape.value(svm).item(),
        total: tape.value(total).item(),
    };
    Ok((
        LossVars {
            contrastive,
            alignment,
            recon,
            svm,
            total,
        },
        report,
    ))
}
