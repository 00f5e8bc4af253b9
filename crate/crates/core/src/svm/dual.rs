use serde::{Deserialize, Serialize};

use super::{check_problem, to_label};
use crate::diffcore::Matrix;
use crate::error::{Error, Result};

pub const DEFAULT_DUAL_TOL: f64 = 1e-3;
const TAU: f64 = 1e-12;

/// Fitted soft-margin classifier. `decision(x) = sum_i coef_i K(x_i, x) + bias`
/// where `coef_i = alpha_i y_i` over the support vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// Indices into the training set, ascending.
    pub support: Vec<usize>,
    /// `alpha_i * y_i` for each support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    /// Number of training graphs the kernel rows must cover.
    pub train_size: usize,
    pub iterations: usize,
}

impl SvmModel {
    pub fn alpha(&self) -> impl Iterator<Item = f64> + '_ {
        self.coef.iter().map(|c| c.abs())
    }

    pub fn decision(&self, k_row: &[f64]) -> Result<f64> {
        if k_row.len() != self.train_size {
            return Err(Error::Length {
                expected: self.train_size,
                found: k_row.len(),
            });
        }
        Ok(self
            .support
            .iter()
            .zip(&self.coef)
            .map(|(&i, c)| c * k_row[i])
            .sum::<f64>()
            + self.bias)
    }

    /// Coefficients expanded to every training index (zero off the support).
    pub fn dense_coef(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.train_size];
        for (&i, &c) in self.support.iter().zip(&self.coef) {
            out[i] = c;
        }
        out
    }
}

/// `(label, decision value)` for one query given its kernel values against
/// the training graphs.
pub fn predict(model: &SvmModel, k_row: &[f64]) -> Result<(u8, f64)> {
    let f = model.decision(k_row)?;
    Ok((to_label(f), f))
}

/// The `k` support vectors with largest `|alpha|`, ties broken by lower index.
/// Returns `(training index, |alpha|)` pairs.
pub fn top_support_vectors(model: &SvmModel, k: usize) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = model.support.iter().copied().zip(model.alpha()).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

struct Smo<'a> {
    k: &'a Matrix,
    y: &'a [f64],
    c: f64,
    alpha: Vec<f64>,
    /// Gradient of `1/2 a^T Q a - e^T a`, with `Q_ij = y_i y_j K_ij`.
    grad: Vec<f64>,
}

impl Smo<'_> {
    fn q(&self, i: usize, j: usize) -> f64 {
        self.y[i] * self.y[j] * self.k.get(i, j)
    }

    fn at_upper(&self, i: usize) -> bool {
        self.alpha[i] >= self.c
    }

    fn at_lower(&self, i: usize) -> bool {
        self.alpha[i] <= 0.0
    }

    /// Second-order working-set selection. `None` once the maximal violating
    /// pair gap falls below `tol`.
    fn select(&self, tol: f64) -> Option<(usize, usize)> {
        let n = self.y.len();
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax_idx = None;
        for t in 0..n {
            let cand = if self.y[t] > 0.0 {
                (!self.at_upper(t)).then(|| -self.grad[t])
            } else {
                (!self.at_lower(t)).then(|| self.grad[t])
            };
            if let Some(v) = cand {
                if v >= gmax {
                    gmax = v;
                    gmax_idx = Some(t);
                }
            }
        }
        let i = gmax_idx?;

        let mut gmax2 = f64::NEG_INFINITY;
        let mut best = None;
        let mut best_obj = f64::INFINITY;
        for j in 0..n {
            let (viol, grad_diff, quad) = if self.y[j] > 0.0 {
                if self.at_lower(j) {
                    continue;
                }
                (
                    self.grad[j],
                    gmax + self.grad[j],
                    self.q(i, i) + self.q(j, j) - 2.0 * self.y[i] * self.q(i, j),
                )
            } else {
                if self.at_upper(j) {
                    continue;
                }
                (
                    -self.grad[j],
                    gmax - self.grad[j],
                    self.q(i, i) + self.q(j, j) + 2.0 * self.y[i] * self.q(i, j),
                )
            };
            gmax2 = gmax2.max(viol);
            if grad_diff > 0.0 {
                let quad = if quad > 0.0 { quad } else { TAU };
                let obj = -(grad_diff * grad_diff) / quad;
                if obj <= best_obj {
                    best_obj = obj;
                    best = Some(j);
                }
            }
        }
        if gmax + gmax2 < tol {
            return None;
        }
        best.map(|j| (i, j))
    }

    fn update(&mut self, i: usize, j: usize) {
        let c = self.c;
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if self.y[i] != self.y[j] {
            let quad = self.q(i, i) + self.q(j, j) + 2.0 * self.q(i, j);
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = self.q(i, i) + self.q(j, j) - 2.0 * self.q(i, j);
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..self.y.len() {
            self.grad[t] += self.q(t, i) * di + self.q(t, j) * dj;
        }
    }

    /// Bias from the free support vectors, or the midpoint of the feasible
    /// interval when none are free.
    fn bias(&self) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free, mut sum_free) = (0usize, 0.0);
        for i in 0..self.y.len() {
            let yg = self.y[i] * self.grad[i];
            let upper_side = if self.at_upper(i) {
                self.y[i] < 0.0
            } else if self.at_lower(i) {
                self.y[i] > 0.0
            } else {
                free += 1;
                sum_free += yg;
                continue;
            };
            if upper_side {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        }
        let rho = if free > 0 { sum_free / free as f64 } else { (ub + lb) / 2.0 };
        -rho
    }
}

/// Soft-margin C-SVM on a precomputed kernel via SMO. Stops when the maximal
/// violating pair gap is below `tol`.
pub fn fit_dual(k: &Matrix, signs: &[f64], c: f64, tol: f64) -> Result<SvmModel> {
    check_problem(k, signs)?;
    if !c.is_finite() || c <= 0.0 {
        return Err(Error::Config(format!("svm C must be positive and finite, got {c}")));
    }
    if signs.iter().all(|&s| s == signs[0]) {
        return Err(Error::SingleClass);
    }
    let n = signs.len();
    let mut smo = Smo {
        k,
        y: signs,
        c,
        alpha: vec![0.0; n],
        grad: vec![-1.0; n],
    };
    let max_iter = 10_000_000usize.max(100 * n);
    let mut iterations = 0;
    while iterations < max_iter {
        let Some((i, j)) = smo.select(tol) else { break };
        smo.update(i, j);
        iterations += 1;
    }
    if iterations == max_iter {
        log::warn!("dual svm: reached {max_iter} iterations before the tolerance");
    }
    let bias = smo.bias();
    let support: Vec<usize> = (0..n).filter(|&i| smo.alpha[i] > 0.0).collect();
    let coef = support.iter().map(|&i| smo.alpha[i] * signs[i]).collect();
    Ok(SvmModel {
        support,
        coef,
        bias,
        c,
        train_size: n,
        iterations,
    })
}

/// Largest violation of the box-constrained KKT conditions on the training
/// set: `y f >= 1` at `alpha = 0`, `y f = 1` strictly inside the box and
/// `y f <= 1` at `alpha = C`.
pub fn kkt_violation(model: &SvmModel, k: &Matrix, signs: &[f64]) -> Result<f64> {
    let alpha: Vec<f64> = model.dense_coef().iter().map(|c| c.abs()).collect();
    let mut worst: f64 = 0.0;
    for i in 0..signs.len() {
        let margin = signs[i] * model.decision(k.row(i))?;
        let v = if alpha[i] <= 0.0 {
            (1.0 - margin).max(0.0)
        } else if alpha[i] >= model.c {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        worst = worst.max(v);
    }
    Ok(worst)
}
