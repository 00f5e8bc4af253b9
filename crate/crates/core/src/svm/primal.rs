use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::check_problem;
use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::kernelspace::min_eigenvalue;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimalConfig {
    pub c: f64,
    pub max_iter: usize,
    /// Stop once the gradient norm is at most this.
    pub tol: f64,
}

impl Default for PrimalConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimalState {
    pub beta: Vec<f64>,
    pub c: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective at `beta = 0` followed by the value after every iteration.
    pub objectives: Vec<f64>,
}

impl PrimalState {
    pub fn objective(&self) -> f64 {
        *self.objectives.last().expect("at least the starting objective")
    }
}

const PSD_THRESHOLD: f64 = -1e-6;
const JITTER: f64 = 1e-8;

struct Problem<'a> {
    k: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    inv_c: f64,
}

impl Problem<'_> {
    fn objective(&self, beta: &DVector<f64>) -> (f64, DVector<f64>) {
        let kb = self.k * beta;
        let reg = self.inv_c * beta.dot(&kb);
        let hinge: f64 = kb
            .iter()
            .zip(self.y.iter())
            .map(|(o, y)| (1.0 - y * o).max(0.0).powi(2))
            .sum();
        (reg + hinge, kb)
    }

    /// `2 K (beta / C + I_A (K beta - y))`.
    fn gradient(&self, beta: &DVector<f64>, kb: &DVector<f64>) -> DVector<f64> {
        let mut inner = beta * self.inv_c;
        for i in 0..beta.len() {
            if self.y[i] * kb[i] < 1.0 {
                inner[i] += kb[i] - self.y[i];
            }
        }
        (self.k * inner) * 2.0
    }

    /// Full Newton target: `(K_AA + I/C) beta_A = y_A`, zero off the active set.
    fn newton_target(&self, active: &[usize]) -> Option<DVector<f64>> {
        let n = self.y.len();
        let m = active.len();
        let mut target = DVector::zeros(n);
        if m == 0 {
            return Some(target);
        }
        let sub = DMatrix::from_fn(m, m, |a, b| {
            self.k[(active[a], active[b])] + if a == b { self.inv_c } else { 0.0 }
        });
        let rhs = DVector::from_iterator(m, active.iter().map(|&i| self.y[i]));
        let chol = sub.clone().cholesky().or_else(|| {
            log::debug!("primal svm: adding {JITTER} jitter to the active block");
            (sub + DMatrix::identity(m, m) * JITTER).cholesky()
        })?;
        let sol = chol.solve(&rhs);
        for (a, &i) in active.iter().enumerate() {
            target[i] = sol[a];
        }
        Some(target)
    }
}

/// `(1/C) beta^T K beta + sum_i max(0, 1 - y_i (K beta)_i)^2`.
pub fn primal_objective(k: &Matrix, signs: &[f64], beta: &[f64], c: f64) -> f64 {
    let kd = k.to_nalgebra();
    let y = DVector::from_column_slice(signs);
    let p = Problem {
        k: &kd,
        y: &y,
        inv_c: 1.0 / c,
    };
    p.objective(&DVector::from_column_slice(beta)).0
}

/// Minimizes the squared-hinge primal with Newton steps on the active set
/// `{i : y_i (K beta)_i < 1}`, starting from `beta = 0`. Each step is
/// backtracked until the objective does not increase.
pub fn fit_primal(k: &Matrix, signs: &[f64], cfg: &PrimalConfig) -> Result<PrimalState> {
    check_problem(k, signs)?;
    if !cfg.c.is_finite() || cfg.c <= 0.0 {
        return Err(Error::Config(format!("svm C must be positive and finite, got {}", cfg.c)));
    }
    let lambda = min_eigenvalue(k);
    if lambda < PSD_THRESHOLD {
        return Err(Error::NotPsd(lambda));
    }

    let kd = k.to_nalgebra();
    let kd = (&kd + kd.transpose()) * 0.5;
    let y = DVector::from_column_slice(signs);
    let p = Problem {
        k: &kd,
        y: &y,
        inv_c: 1.0 / cfg.c,
    };

    let n = signs.len();
    let mut beta = DVector::zeros(n);
    let (mut obj, mut kb) = p.objective(&beta);
    let mut objectives = vec![obj];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        let grad = p.gradient(&beta, &kb);
        if grad.norm() <= cfg.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let active: Vec<usize> = (0..n).filter(|&i| y[i] * kb[i] < 1.0).collect();
        let direction = match p.newton_target(&active) {
            Some(target) => target - &beta,
            None => {
                log::warn!("primal svm: singular active block, taking a gradient step");
                -grad.clone()
            }
        };

        // Armijo backtracking along the direction.
        let slope = grad.dot(&direction);
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-12 {
            let candidate = &beta + &direction * step;
            let (cand_obj, cand_kb) = p.objective(&candidate);
            if cand_obj <= obj + 1e-4 * step * slope.min(0.0) {
                accepted = Some((candidate, cand_obj, cand_kb));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((b, o, k)) => {
                let stalled = (obj - o).abs() <= f64::EPSILON * obj.abs().max(1.0) && step == 1.0;
                beta = b;
                obj = o;
                kb = k;
                objectives.push(obj);
                if stalled {
                    // A full step that leaves the objective unchanged is a
                    // fixed point of the Newton iteration.
                    converged = true;
                    break;
                }
            }
            None => {
                objectives.push(obj);
                converged = p.gradient(&beta, &kb).norm() <= cfg.tol.max(1e-6);
                break;
            }
        }
    }
    if !converged && iterations >= cfg.max_iter {
        converged = p.gradient(&beta, &kb).norm() <= cfg.tol;
    }
    if !beta.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("primal svm coefficients".into()));
    }
    Ok(PrimalState {
        beta: beta.iter().copied().collect(),
        c: cfg.c,
        converged,
        iterations,
        objectives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_closed_form() {
        let s = fit_primal(&Matrix::scalar(1.0), &[1.0], &PrimalConfig::default()).unwrap();
        assert!((s.beta[0] - 0.5).abs() <= 1e-8);
        assert!((s.objective() - 0.5).abs() <= 1e-8);
        assert!(s.converged);
    }

    #[test]
    fn identity_kernel_decouples() {
        let s = fit_primal(&Matrix::identity(2), &[1.0, -1.0], &PrimalConfig::default()).unwrap();
        assert!((s.beta[0] - 0.5).abs() <= 1e-12);
        assert!((s.beta[1] + 0.5).abs() <= 1e-12);
    }

    #[test]
    fn rejects_indefinite_kernel() {
        let k = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(matches!(
            fit_primal(&k, &[1.0, -1.0], &PrimalConfig::default()),
            Err(Error::NotPsd(_))
        ));
    }

    #[test]
    fn rank_deficient_kernel_still_converges() {
        let k = Matrix::filled(3, 3, 1.0);
        let s = fit_primal(&k, &[1.0, 1.0, -1.0], &PrimalConfig::default()).unwrap();
        assert!(s.converged);
        assert!(s.objectives.windows(2).all(|w| w[1] <= w[0]));
    }
}
