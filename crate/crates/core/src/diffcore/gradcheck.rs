use crate::diffcore::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Per-block outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct BlockReport {
    pub name: String,
    /// `max_i |tape_i - fd_i| / max(max_i |fd_i|, max_i |tape_i|, 1e-12)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub blocks: Vec<BlockReport>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error <= self.tolerance)
    }
}

/// Compares tape gradients of a scalar loss against central finite
/// differences, one parameter block at a time.
///
/// `loss` receives a fresh tape and one leaf per block, in order. It must be
/// deterministic; two unperturbed evaluations that disagree are an error.
pub fn gradcheck<F>(loss: F, params: &[(String, Matrix)], eps: f64, tolerance: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::checked();
        let vars: Vec<Var> = values.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = loss(&mut tape, &vars)?;
        tape.check()?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::checked();
    let vars: Vec<Var> = params.iter().map(|(_, m)| tape.leaf(m.clone())).collect();
    let out = loss(&mut tape, &vars)?;
    let base = tape.value(out).item();
    let grads = tape.backward(out)?;

    let mut values: Vec<Matrix> = params.iter().map(|(_, m)| m.clone()).collect();
    let again = eval(&values)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Config(format!(
            "loss is not deterministic: {base:e} vs {again:e}"
        )));
    }

    let mut blocks = Vec::with_capacity(params.len());
    for (b, (name, _)) in params.iter().enumerate() {
        let analytic = grads.wrt(vars[b]);
        let mut numeric = Matrix::zeros(analytic.rows(), analytic.cols());
        for k in 0..analytic.len() {
            let orig = values[b].data()[k];
            values[b].data_mut()[k] = orig + eps;
            let plus = eval(&values)?;
            values[b].data_mut()[k] = orig - eps;
            let minus = eval(&values)?;
            values[b].data_mut()[k] = orig;
            numeric.data_mut()[k] = (plus - minus) / (2.0 * eps);
        }
        let max_abs_error = analytic.max_abs_diff(&numeric);
        let scale = numeric.max_abs().max(analytic.max_abs()).max(1e-12);
        blocks.push(BlockReport {
            name: name.clone(),
            max_rel_error: max_abs_error / scale,
            max_abs_error,
        });
    }
    Ok(GradcheckReport { blocks, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::rc::Rc;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        let d = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_vec(r, c, d).unwrap()
    }

    fn check1(name: &str, x: Matrix, f: impl Fn(&mut Tape, Var) -> Result<Var>) -> f64 {
        let report = gradcheck(|t, v| f(t, v[0]), &[(name.into(), x)], 1e-5, 1e-6).unwrap();
        let err = report.max_rel_error();
        assert!(report.passed(), "{name}: rel err {err:e}");
        err
    }

    #[test]
    fn quadratic_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 4, 3);
        let report = gradcheck(
            |t, v| {
                let s = t.square(v[0]);
                Ok(t.sum(s))
            },
            &[("x".into(), x)],
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn tanh_derivative_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(0.0));
        let y = t.tanh(x);
        let g = t.backward(y).unwrap().wrt(x).item();
        let h: f64 = 1e-5;
        let fd = (h.tanh() - (-h).tanh()) / (2.0 * h);
        assert!((g - fd).abs() <= 1e-8);
        assert_eq!(g, 1.0);
    }

    #[test]
    fn unary_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // keep away from relu/clamp kinks and sqrt's singularity
        let x = random(&mut rng, 3, 4).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
        let pos = x.map(|v| v.abs() + 0.5);
        let w = Rc::new(random(&mut rng, 3, 4));
        let weighted = |t: &mut Tape, y: Var| -> Result<Var> {
            let m = t.mul_const(y, w.clone())?;
            Ok(t.sum(m))
        };
        check1("relu", x.clone(), |t, v| {
            let y = t.relu(v);
            weighted(t, y)
        });
        check1("tanh", x.clone(), |t, v| {
            let y = t.tanh(v);
            weighted(t, y)
        });
        check1("exp", x.clone(), |t, v| {
            let y = t.exp(v);
            weighted(t, y)
        });
        check1("sqrt", pos.clone(), |t, v| {
            let y = t.sqrt(v);
            weighted(t, y)
        });
        check1("square", x.clone(), |t, v| {
            let y = t.square(v);
            weighted(t, y)
        });
        check1("scale", x.clone(), |t, v| {
            let y = t.scale(v, -2.5);
            weighted(t, y)
        });
        check1("add_scalar", x.clone(), |t, v| {
            let y = t.add_scalar(v, 3.0);
            let y = t.square(y);
            weighted(t, y)
        });
        check1("clamp", x.clone(), |t, v| {
            let y = t.clamp(v, -0.5, 0.5);
            weighted(t, y)
        });
    }

    #[test]
    fn binary_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 3, 4).map(|v| v.signum() * (v.abs() + 0.5));
        let c = random(&mut rng, 4, 2);
        let sq = random(&mut rng, 5, 4);
        for (name, which) in [("add", 0), ("sub", 1), ("mul", 2), ("div", 3)] {
            let report = gradcheck(
                |t, v| {
                    let y = match which {
                        0 => t.add(v[0], v[1])?,
                        1 => t.sub(v[0], v[1])?,
                        2 => t.mul(v[0], v[1])?,
                        _ => t.div(v[0], v[1])?,
                    };
                    let y = t.tanh(y);
                    Ok(t.sum(y))
                },
                &[("a".into(), a.clone()), ("b".into(), b.clone())],
                1e-5,
                1e-6,
            )
            .unwrap();
            assert!(report.passed(), "{name}: {report:?}");
        }
        let report = gradcheck(
            |t, v| {
                let y = t.matmul(v[0], v[1])?;
                let y = t.tanh(y);
                Ok(t.sum(y))
            },
            &[("a".into(), a.clone()), ("c".into(), c)],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "matmul: {report:?}");
        let report = gradcheck(
            |t, v| {
                let y = t.matmul_t(v[0], v[1])?;
                let y = t.tanh(y);
                Ok(t.sum(y))
            },
            &[("a".into(), a.clone()), ("sq".into(), sq)],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "matmul_t: {report:?}");
        let report = gradcheck(
            |t, v| {
                let y = t.concat_cols(&[v[0], v[1], v[0]])?;
                let y = t.square(y);
                let y = t.tanh(y);
                Ok(t.sum(y))
            },
            &[("a".into(), a), ("b".into(), b)],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "concat: {report:?}");
    }

    #[test]
    fn structural_ops() {
        use crate::diffcore::CsrMatrix;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, 5, 3);
        let sp = Rc::new(CsrMatrix::from_triplets(
            5,
            &[(0, 0, 0.5), (0, 3, 0.5), (1, 1, 1.0), (2, 4, 0.3), (2, 2, 0.7), (3, 3, 1.0), (4, 4, 1.0)],
        ));
        check1("spmm", x.clone(), |t, v| {
            let y = t.spmm(sp.clone(), v)?;
            let y = t.tanh(y);
            Ok(t.sum(y))
        });
        let idx: Rc<[usize]> = vec![4, 0, 0, 2].into();
        check1("gather_rows", x.clone(), |t, v| {
            let y = t.gather_rows(v, idx.clone())?;
            let y = t.tanh(y);
            Ok(t.sum(y))
        });
        let seg: Rc<[usize]> = vec![0, 0, 0, 1, 1].into();
        let col = random(&mut rng, 5, 1);
        let w = Rc::new(random(&mut rng, 5, 1));
        check1("segment_softmax", col.clone(), |t, v| {
            let y = t.segment_softmax(v, seg.clone())?;
            let y = t.mul_const(y, w.clone())?;
            Ok(t.sum(y))
        });
        let report = gradcheck(
            |t, v| {
                let y = t.segment_weighted_sum(v[0], v[1], seg.clone(), 2)?;
                let y = t.tanh(y);
                Ok(t.sum(y))
            },
            &[("w".into(), col), ("x".into(), x.clone())],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "segment_weighted_sum: {report:?}");
        let y = random(&mut rng, 5, 3);
        let report = gradcheck(
            |t, v| {
                let c = t.row_cosine(v[0], v[1], 1e-12)?;
                let c = t.square(c);
                Ok(t.sum(c))
            },
            &[("a".into(), x.clone()), ("b".into(), y)],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "row_cosine: {report:?}");
        let wd = Rc::new(random(&mut rng, 5, 5));
        check1("pairwise_cosine", x.clone(), |t, v| {
            let d = t.pairwise_cosine_distance(v, 1e-12);
            let d = t.mul_const(d, wd.clone())?;
            Ok(t.sum(d))
        });
        check1("pairwise_euclidean", x, |t, v| {
            let d = t.pairwise_euclidean_distance(v);
            let d = t.mul_const(d, wd.clone())?;
            Ok(t.sum(d))
        });
    }

    #[test]
    fn sparsemax_away_from_support_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Rc::new(random(&mut rng, 6, 5));
        let mut tested = 0;
        while tested < 20 {
            let z = random(&mut rng, 6, 5).scale(2.0);
            // skip draws where a perturbation of 1e-5 could flip support membership
            let p = crate::diffcore::sparsemax(&z).unwrap();
            let near = (0..z.rows()).any(|r| {
                let tau = {
                    let (i, v) = p.row(r).iter().enumerate().find(|(_, v)| **v > 0.0).unwrap();
                    z.get(r, i) - v
                };
                z.row(r).iter().any(|zi| (zi - tau).abs() < 1e-3)
            });
            if near {
                continue;
            }
            tested += 1;
            check1("sparsemax", z, |t, v| {
                let y = t.sparsemax(v)?;
                let y = t.mul_const(y, w.clone())?;
                let y = t.square(y);
                Ok(t.sum(y))
            });
        }
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let res = gradcheck(
            |t, v| {
                calls.set(calls.get() + 1.0);
                let c = t.add_scalar(v[0], calls.get());
                Ok(t.sum(c))
            },
            &[("x".into(), Matrix::scalar(1.0))],
            1e-5,
            1e-6,
        );
        assert!(res.is_err());
    }
}
