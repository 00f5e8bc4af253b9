//! Independent reference implementations shared by the integration tests.
//! None of these call into the numeric routines they are used to check.

#![allow(dead_code)]

use graphkernel::diffcore::Matrix;
use graphkernel::graphdata::{Edge, PatientGraph};
use rand::Rng;

/// Simplex projection by bisection on the threshold: finds `tau` with
/// `sum_i max(z_i - tau, 0) = 1` and returns `max(z - tau, 0)`.
pub fn sparsemax_oracle(z: &[f64]) -> Vec<f64> {
    let mass = |tau: f64| z.iter().map(|&v| (v - tau).max(0.0)).sum::<f64>();
    let hi_z = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (hi_z - 1.0, hi_z);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    z.iter().map(|&v| (v - tau).max(0.0)).collect()
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(k: &Matrix) -> Vec<f64> {
    let n = k.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| k.row(i).to_vec()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (arp, arq) = (row[p], row[q]);
                    row[p] = c * arp - s * arq;
                    row[q] = s * arp + c * arq;
                }
                let (lo, hi) = a.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (apr, aqr) = (*x, *y);
                    *x = c * apr - s * aqr;
                    *y = s * apr + c * aqr;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

pub fn jacobi_min_eigenvalue(k: &Matrix) -> f64 {
    jacobi_eigenvalues(k).into_iter().fold(f64::INFINITY, f64::min)
}

/// `(1/C) b^T K b + sum max(0, 1 - y (K b))^2`, written out with loops.
pub fn primal_objective_oracle(k: &Matrix, y: &[f64], beta: &[f64], c: f64) -> f64 {
    let n = y.len();
    let kb: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k.get(i, j) * beta[j]).sum()).collect();
    let reg: f64 = (0..n).map(|i| beta[i] * kb[i]).sum::<f64>() / c;
    reg + (0..n).map(|i| (1.0 - y[i] * kb[i]).max(0.0).powi(2)).sum::<f64>()
}

/// Minimum of the squared-hinge primal by accelerated gradient descent with
/// a fixed `1/L` step. The problem is unconstrained, so the projection is the
/// identity.
pub fn projected_gradient_primal(k: &Matrix, y: &[f64], c: f64, iters: usize) -> f64 {
    let n = y.len();
    // Power iteration for the largest eigenvalue of K.
    let mut v = vec![1.0; n];
    let mut lam = 0.0;
    for _ in 0..500 {
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k.get(i, j) * v[j]).sum()).collect();
        lam = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if lam == 0.0 {
            break;
        }
        v = w.iter().map(|x| x / lam).collect();
    }
    let l = 2.0 * lam * (1.0 / c + lam) + 1e-12;
    let grad = |b: &[f64]| -> Vec<f64> {
        let kb: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k.get(i, j) * b[j]).sum()).collect();
        let inner: Vec<f64> = (0..n)
            .map(|i| b[i] / c + if y[i] * kb[i] < 1.0 { kb[i] - y[i] } else { 0.0 })
            .collect();
        (0..n).map(|i| 2.0 * (0..n).map(|j| k.get(i, j) * inner[j]).sum::<f64>()).collect()
    };
    let mut x = vec![0.0; n];
    let mut z = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let g = grad(&z);
        let next: Vec<f64> = (0..n).map(|i| z[i] - g[i] / l).collect();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = (0..n).map(|i| next[i] + (t - 1.0) / t_next * (next[i] - x[i])).collect();
        x = next;
        t = t_next;
    }
    primal_objective_oracle(k, y, &x, c)
}

/// Random DAG: edges only go from lower to higher node index.
pub fn random_graph<R: Rng>(rng: &mut R, id: &str, max_nodes: usize, vocab: usize, label: u8) -> PatientGraph {
    let n = rng.gen_range(1..=max_nodes);
    let nodes = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
    let mut edges = Vec::new();
    for dst in 1..n {
        for src in 0..dst {
            if rng.gen_bool(0.35) {
                edges.push(Edge {
                    src,
                    dst,
                    weight: rng.gen_range(0.0..30.0f64).floor(),
                });
            }
        }
    }
    PatientGraph {
        id: id.to_string(),
        label,
        nodes,
        edges,
    }
}

/// Random positive semidefinite matrix `A A^T / r`.
pub fn random_psd<R: Rng>(rng: &mut R, n: usize, rank: usize) -> Matrix {
    let a: Vec<f64> = (0..n * rank).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v: f64 = (0..rank).map(|r| a[i * rank + r] * a[j * rank + r]).sum();
            k.set(i, j, v / rank as f64);
        }
    }
    k
}

/// 20 two-dimensional points (10 per class) with a linear kernel, C = 0.5.
/// Dual coefficients, bias and decision values were computed once with a
/// general-purpose interior-point QP solver at 1e-12 tolerance and cross
/// checked against libsvm to 3e-8.
pub mod svm_fixture {
    pub const C: f64 = 0.5;
    pub const X: [[f64; 2]; 20] = [
        [1.113, 0.881],
        [1.576, 1.094],
        [0.518, 1.325],
        [2.174, 1.852],
        [0.367, -0.139],
        [0.439, 1.037],
        [-1.093, 0.803],
        [-0.121, 0.341],
        [0.51, 0.715],
        [1.37, 1.938],
        [-1.116, 0.23],
        [-1.599, -0.684],
        [-0.187, -0.915],
        [-1.669, -1.83],
        [-1.412, -0.802],
        [-1.909, -1.188],
        [-1.143, -0.513],
        [-0.807, -0.68],
        [-1.588, -1.117],
        [-0.294, 0.344],
    ];
    pub const X_TEST: [[f64; 2]; 5] = [[-1.889, 2.271], [2.019, 1.172], [0.397, -0.471], [2.187, 2.94], [2.702, 1.973]];
    pub const ALPHA: [f64; 20] = [
        0.0,
        0.0,
        0.0,
        0.0,
        0.5,
        0.0,
        0.5,
        0.5,
        0.15413336289430007,
        0.0,
        0.5,
        0.0,
        0.5,
        0.0,
        0.0,
        0.0,
        0.0,
        0.1541333628937832,
        0.0,
        0.5,
    ];
    pub const BIAS: f64 = 0.07029177465965852;
    pub const DECISION: [f64; 20] = [
        1.4959408271202508,
        1.9526992987290008,
        1.5463137342653976,
        2.9714556540677597,
        0.15898121041550317,
        1.2449036169135062,
        0.1516216084211337,
        0.30316801441084623,
        0.9999999999992564,
        2.583118147913332,
        -0.37050543690320203,
        -1.4613230261978547,
        -0.8503277135525442,
        -2.519448964180879,
        -1.458024108583677,
        -2.0880611390501285,
        -1.0459071837935867,
        -0.9999999999992564,
        -1.839476042025316,
        0.20583916299942978,
    ];
    pub const DECISION_TEST: [f64; 5] = [
        0.9951462203679636,
        2.2780157319921015,
        -0.118500306107305,
        3.945131024239938,
        3.3840862364132267,
    ];

    pub fn signs() -> Vec<f64> {
        (0..20).map(|i| if i < 10 { 1.0 } else { -1.0 }).collect()
    }

    fn dot(a: &[f64; 2], b: &[f64; 2]) -> f64 {
        a[0] * b[0] + a[1] * b[1]
    }

    pub fn gram() -> graphkernel::diffcore::Matrix {
        let rows: Vec<Vec<f64>> = X.iter().map(|a| X.iter().map(|b| dot(a, b)).collect()).collect();
        graphkernel::diffcore::Matrix::from_rows(&rows)
    }

    pub fn test_rows() -> Vec<Vec<f64>> {
        X_TEST.iter().map(|a| X.iter().map(|b| dot(a, b)).collect()).collect()
    }
}

/// Gradient check of the combined loss for one random batch with the
/// primal SVM coefficients frozen at their fitted values.
pub mod full_loss {
    use std::rc::Rc;

    use graphkernel::diffcore::{gradcheck, GradcheckReport, Tape, Var};
    use graphkernel::encoder::EncoderVars;
    use graphkernel::graphdata::{make_batch, PatientGraph};
    use graphkernel::kernelspace::KernelVariant;
    use graphkernel::losses::{total_loss, LossInputs};
    use graphkernel::model::{forward, ModelParams, ParamVars};
    use graphkernel::trainer::{fit_batch_beta, TrainConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const VOCAB: usize = 7;

    pub fn config(variant: KernelVariant) -> TrainConfig {
        TrainConfig {
            layers: 2,
            dim: 8,
            clusters: 4,
            kernel: variant,
            ..TrainConfig::desk()
        }
    }

    pub fn random_batch(seed: u64) -> Vec<PatientGraph> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = rng.gen_range(2..=8);
        (0..b)
            .map(|i| {
                let label = if i < 2 { i as u8 } else { rng.gen_range(0..=1) };
                super::random_graph(&mut rng, &format!("g{i}"), 10, VOCAB, label)
            })
            .collect()
    }

    pub fn check(seed: u64, variant: KernelVariant, eps: f64, tol: f64) -> GradcheckReport {
        let cfg = config(variant);
        let model = cfg.model_config(VOCAB);
        let graphs = random_batch(seed);
        let refs: Vec<&PatientGraph> = graphs.iter().collect();
        let batch = Rc::new(make_batch(&refs, VOCAB, &model.batch).unwrap());
        let params = ModelParams::init(&model, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed)).unwrap();

        let beta = {
            let mut tape = Tape::new();
            let vars = ParamVars::register(&mut tape, &params);
            let f = forward(&mut tape, &batch, &vars, &model.kernel).unwrap();
            fit_batch_beta(tape.value(f.kernel), &batch.labels, &cfg).unwrap().beta
        };
        let blocks: Vec<(String, graphkernel::diffcore::Matrix)> =
            params.blocks().into_iter().map(|(n, m)| (n, m.clone())).collect();
        let depth = model.layers;
        let loss = |tape: &mut Tape, vars: &[Var]| {
            let pv = ParamVars {
                encoder: EncoderVars {
                    layers: vars[..depth].to_vec(),
                    concat: vars[depth],
                },
                centers: vars[depth + 1],
            };
            let f = forward(tape, &batch, &pv, &model.kernel)?;
            let inputs = LossInputs {
                distances: f.distances,
                kernel: f.kernel,
                recon: f.recon,
                labels: &batch.labels,
                beta: &beta,
                svm_c: cfg.svm_c,
                margin: cfg.margin,
            };
            Ok(total_loss(tape, &inputs, &cfg.weights)?.0.total)
        };
        gradcheck(loss, &blocks, eps, tol).unwrap()
    }
}
