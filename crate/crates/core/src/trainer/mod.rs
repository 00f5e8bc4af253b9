//! Mini-batch training with a per-batch frozen primal SVM, Adam updates and
//! early stopping on validation loss, followed by one dual SVM fit on the
//! final training gram.

mod checkpoint;

pub use checkpoint::{Checkpoint, Precision, CHECKPOINT_VERSION};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Matrix, Tape};
use crate::error::{Error, Result};
use crate::graphdata::{make_batch, BatchOptions, Dataset, PatientGraph};
use crate::kernelspace::{clip_spectrum, cross_gram, min_eigenvalue, GramMatrix, KernelConfig, KernelVariant};
use crate::losses::{label_signs, total_loss, LossInputs, LossReport, LossWeights};
use crate::metrics::{self, Metrics};
use crate::model::{embed, forward, ModelConfig, ModelParams, ParamVars};
use crate::svm::{fit_dual, fit_primal, predict, PrimalConfig, PrimalState, DEFAULT_DUAL_TOL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub layers: usize,
    pub dim: usize,
    pub clusters: usize,
    pub margin: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub svm_c: f64,
    pub kernel: KernelVariant,
    pub seed: u64,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub primal_max_iter: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub batch: BatchOptions,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            dim: 256,
            clusters: 256,
            margin: 1.0,
            batch_size: 128,
            lr: 0.0005,
            epochs: 10,
            svm_c: 1.0,
            kernel: KernelVariant::Cosine,
            seed: 0,
            patience: 2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            primal_max_iter: 100,
            primal_tol: 1e-8,
            dual_tol: DEFAULT_DUAL_TOL,
            batch: BatchOptions::default(),
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    /// Small configuration that trains in seconds on a laptop.
    pub fn desk() -> Self {
        Self {
            layers: 2,
            dim: 32,
            clusters: 16,
            batch_size: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive_ints = [
            ("layers", self.layers),
            ("dim", self.dim),
            ("clusters", self.clusters),
            ("batch size", self.batch_size),
            ("primal max iterations", self.primal_max_iter),
        ];
        for (name, v) in positive_ints {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let positive_reals = [
            ("margin", self.margin),
            ("learning rate", self.lr),
            ("svm C", self.svm_c),
            ("adam epsilon", self.adam_eps),
            ("primal tolerance", self.primal_tol),
            ("dual tolerance", self.dual_tol),
        ];
        for (name, v) in positive_reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            dim: self.dim,
            layers: self.layers,
            clusters: self.clusters,
            kernel: KernelConfig::new(self.kernel),
            batch: self.batch,
        }
    }
}

/// Adam over a list of parameter blocks.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (i, (w, &g)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// One line of the training log. `batch` is `None` on the per-epoch
/// summary line, which carries mean training losses and the validation loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub batch: Option<usize>,
    pub losses: LossReport,
    pub val_loss: Option<f64>,
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("epoch,batch,contrastive,alignment,recon,svm,total,val_loss\n");
    for r in rows {
        let batch = r.batch.map_or_else(|| "mean".to_string(), |b| b.to_string());
        let val = r.val_loss.map_or_else(String::new, |v| v.to_string());
        let l = &r.losses;
        s.push_str(&format!(
            "{},{batch},{},{},{},{},{},{val}\n",
            r.epoch, l.contrastive, l.alignment, l.recon, l.svm, l.total
        ));
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    /// Epoch whose parameters were kept (0 means the initialization).
    pub best_epoch: usize,
}

impl TrainOutcome {
    /// Mean training total loss of each completed epoch.
    pub fn epoch_losses(&self) -> Vec<f64> {
        self.log
            .iter()
            .filter(|r| r.batch.is_none())
            .map(|r| r.losses.total)
            .collect()
    }
}

/// Primal SVM coefficients for a batch kernel, computed on a detached copy.
///
/// The cosine kernel is not positive semidefinite in general; when the batch
/// kernel has a clearly negative eigenvalue the fit uses its nearest PSD
/// matrix instead. The loss itself always sees the raw kernel.
pub fn fit_batch_beta(k: &Matrix, labels: &[u8], cfg: &TrainConfig) -> Result<PrimalState> {
    let clipped;
    let k_fit = if min_eigenvalue(k) < -1e-6 {
        clipped = clip_spectrum(k);
        log::debug!("batch kernel is indefinite; fitting beta on its clipped spectrum");
        &clipped
    } else {
        k
    };
    let primal = fit_primal(
        k_fit,
        &label_signs(labels),
        &PrimalConfig {
            c: cfg.svm_c,
            max_iter: cfg.primal_max_iter,
            tol: cfg.primal_tol,
        },
    )?;
    if !primal.converged {
        log::debug!("primal svm stopped after {} iterations without converging", primal.iterations);
    }
    Ok(primal)
}

/// Forward pass, primal SVM fit on the detached kernel and the combined loss
/// for one batch. Returns the tape, the parameter handles and the loss.
fn batch_loss(
    graphs: &[&PatientGraph],
    params: &ModelParams,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Tape, ParamVars, crate::losses::LossVars, LossReport)> {
    let batch = make_batch(graphs, model.vocab_size, &model.batch)?;
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let f = forward(&mut tape, &batch, &vars, &model.kernel)?;
    let primal = fit_batch_beta(tape.value(f.kernel), &batch.labels, cfg)?;
    let inputs = LossInputs {
        distances: f.distances,
        kernel: f.kernel,
        recon: f.recon,
        labels: &batch.labels,
        beta: &primal.beta,
        svm_c: cfg.svm_c,
        margin: cfg.margin,
    };
    let (loss_vars, report) = total_loss(&mut tape, &inputs, &cfg.weights)?;
    Ok((tape, vars, loss_vars, report))
}

/// Mean total loss over consecutive chunks of `graphs`.
pub fn validation_loss(graphs: &[PatientGraph], params: &ModelParams, model: &ModelConfig, cfg: &TrainConfig) -> Result<f64> {
    let refs: Vec<&PatientGraph> = graphs.iter().collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in refs.chunks(cfg.batch_size) {
        let (_, _, _, report) = batch_loss(chunk, params, model, cfg)?;
        total += report.total;
        count += 1;
    }
    Ok(total / count.max(1) as f64)
}

fn require_both_classes(graphs: &[PatientGraph]) -> Result<()> {
    let pos = graphs.iter().filter(|g| g.label == 1).count();
    if pos == 0 || pos == graphs.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

pub fn train(train_set: &Dataset, val_graphs: &[PatientGraph], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.graphs.is_empty() {
        return Err(Error::Empty("training graphs"));
    }
    if val_graphs.is_empty() {
        return Err(Error::Empty("validation graphs"));
    }
    require_both_classes(&train_set.graphs)?;
    let vocab_size = train_set.vocab.len();
    for g in train_set.graphs.iter().chain(val_graphs) {
        g.validate(vocab_size)?;
    }

    let model = cfg.model_config(vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(&model, &mut rng)?;
    let shapes: Vec<(usize, usize)> = params.blocks().iter().map(|b| b.1.shape()).collect();
    let mut adam = Adam::new(&shapes, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);

    let mut log = Vec::new();
    let mut best = (validation_loss(val_graphs, &params, &model, cfg)?, params.clone(), 0usize);
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..train_set.graphs.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut mean = LossReport::default();
        let mut used = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let graphs: Vec<&PatientGraph> = idx.iter().map(|&i| &train_set.graphs[i]).collect();
            let first = graphs[0].label;
            if graphs.iter().all(|g| g.label == first) {
                log::warn!("epoch {epoch} batch {b}: single-class batch skipped");
                continue;
            }
            let diverged = |msg: String| Error::Diverged { epoch, batch: b, msg };
            let (tape, vars, loss, report) = batch_loss(&graphs, &params, &model, cfg).map_err(|e| match e {
                Error::NonFinite(m) => diverged(m),
                other => other,
            })?;
            let grads = tape.backward(loss.total)?;
            let grads: Vec<Matrix> = vars.vars().into_iter().map(|v| grads.wrt(v)).collect();
            if !grads.iter().all(Matrix::is_finite) {
                return Err(diverged("non-finite gradient".into()));
            }
            adam.step(params.blocks_mut(), &grads);
            mean.accumulate(&report, 1.0);
            used += 1;
            log.push(LogRow {
                epoch,
                batch: Some(b),
                losses: report,
                val_loss: None,
            });
        }
        let mut summary = LossReport::default();
        summary.accumulate(&mean, 1.0 / used.max(1) as f64);
        let val = validation_loss(val_graphs, &params, &model, cfg)?;
        log::info!("epoch {epoch}: train loss {:.6}, validation loss {val:.6}", summary.total);
        log.push(LogRow {
            epoch,
            batch: None,
            losses: summary,
            val_loss: Some(val),
        });
        if val < best.0 {
            best = (val, params.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("early stopping after epoch {epoch}; keeping epoch {}", best.2);
                break;
            }
        }
    }

    let (_, params, best_epoch) = best;
    let checkpoint = finish(train_set, params, model, cfg)?;
    Ok(TrainOutcome {
        checkpoint,
        log,
        best_epoch,
    })
}

/// Embeds the training graphs with the final parameters and fits the dual SVM.
fn finish(train_set: &Dataset, params: ModelParams, model: ModelConfig, cfg: &TrainConfig) -> Result<Checkpoint> {
    let refs: Vec<&PatientGraph> = train_set.graphs.iter().collect();
    let embeddings = embed(&refs, &params, &model, cfg.batch_size.max(64))?;
    let ids: Vec<String> = train_set.graphs.iter().map(|g| g.id.clone()).collect();
    let labels: Vec<u8> = train_set.graphs.iter().map(|g| g.label).collect();
    let gram = GramMatrix::from_embeddings(&embeddings, ids.clone(), &model.kernel)?;
    let svm = fit_dual(&gram.values, &label_signs(&labels), cfg.svm_c, cfg.dual_tol)?;
    Ok(Checkpoint {
        train: cfg.clone(),
        model,
        vocab: train_set.vocab.clone(),
        params,
        svm,
        train_ids: ids,
        train_labels: labels,
        train_embeddings: embeddings,
    })
}

/// Per-graph prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: u8,
    pub predicted: u8,
    pub decision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub predictions: Vec<Prediction>,
}

impl Checkpoint {
    /// Kernel values of each graph against every training graph.
    pub fn kernel_rows(&self, graphs: &[&PatientGraph]) -> Result<Matrix> {
        let emb = embed(graphs, &self.params, &self.model, 64)?;
        Ok(cross_gram(&emb, &self.train_embeddings, &self.model.kernel))
    }

    pub fn check_vocabulary(&self, data: &Dataset) -> Result<()> {
        let (expected, found) = (self.vocab.hash(), data.vocab.hash());
        if expected != found {
            return Err(Error::VocabularyMismatch { expected, found });
        }
        Ok(())
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<Prediction>> {
        self.check_vocabulary(data)?;
        let refs: Vec<&PatientGraph> = data.graphs.iter().collect();
        let rows = self.kernel_rows(&refs)?;
        data.graphs
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let (predicted, decision) = predict(&self.svm, rows.row(i))?;
                Ok(Prediction {
                    id: g.id.clone(),
                    label: g.label,
                    predicted,
                    decision,
                })
            })
            .collect()
    }
}

pub fn evaluate(checkpoint: &Checkpoint, data: &Dataset) -> Result<Evaluation> {
    if data.graphs.is_empty() {
        return Err(Error::Empty("evaluation graphs"));
    }
    let predictions = checkpoint.predict(data)?;
    let labels: Vec<u8> = predictions.iter().map(|p| p.label).collect();
    let predicted: Vec<u8> = predictions.iter().map(|p| p.predicted).collect();
    let scores: Vec<f64> = predictions.iter().map(|p| p.decision).collect();
    Ok(Evaluation {
        metrics: metrics::compute(&labels, &predicted, &scores),
        predictions,
    })
}
