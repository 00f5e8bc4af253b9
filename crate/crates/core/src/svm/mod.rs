//! Kernel SVMs on precomputed gram matrices.
//!
//! [`fit_primal`] solves the bias-free squared-hinge problem used inside each
//! training batch. [`fit_dual`] trains the standard soft-margin classifier
//! (with bias) that makes the final predictions.

mod dual;
mod primal;

pub use dual::{fit_dual, kkt_violation, predict, top_support_vectors, SvmModel, DEFAULT_DUAL_TOL};
pub use primal::{fit_primal, primal_objective, PrimalConfig, PrimalState};

use crate::error::{Error, Result};

/// Maps `{1, 0}` labels to `{+1, -1}` signs.
pub fn to_signs(labels: &[u8]) -> Vec<f64> {
    crate::losses::label_signs(labels)
}

/// Inverse of [`to_signs`] applied to decision values: positive maps to 1.
pub fn to_label(decision: f64) -> u8 {
    u8::from(decision > 0.0)
}

pub(crate) fn check_problem(k: &crate::diffcore::Matrix, signs: &[f64]) -> Result<()> {
    let n = signs.len();
    if k.shape() != (n, n) {
        return Err(Error::Shape {
            op: "svm",
            lhs: k.shape(),
            rhs: (n, n),
        });
    }
    if n == 0 {
        return Err(Error::Empty("svm training set"));
    }
    if !k.is_finite() {
        return Err(Error::NonFinite("svm kernel matrix".into()));
    }
    if let Some(s) = signs.iter().find(|&&s| s != 1.0 && s != -1.0) {
        return Err(Error::Config(format!("svm labels must be +1 or -1, got {s}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_mapping_round_trip() {
        let labels = [1u8, 0, 0, 1];
        let back: Vec<u8> = to_signs(&labels).into_iter().map(to_label).collect();
        assert_eq!(back, labels);
    }
}
