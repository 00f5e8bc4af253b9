//! The full network: encoder, global cluster matching and attention pooling.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Matrix, Tape, Var};
use crate::encoder::{encode_on, EncoderParams, EncoderVars};
use crate::error::{Error, Result};
use crate::graphdata::{make_batch, normalized_adjacency, BatchOptions, GraphBatch, PatientGraph};
use crate::kernelspace::{batch_matrices, KernelConfig};
use crate::matching::{assign, pool, query, recon_loss, ClusterParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub clusters: usize,
    pub kernel: KernelConfig,
    pub batch: BatchOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub clusters: ClusterParams,
}

impl ModelParams {
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let encoder = EncoderParams::init(cfg.vocab_size, cfg.dim, cfg.layers, rng)?;
        let clusters = ClusterParams::init(cfg.clusters, cfg.dim, rng)?;
        Ok(Self { encoder, clusters })
    }

    /// Parameter blocks in a fixed order: `W0..W{t-1}`, `W_concat`, `M`.
    pub fn blocks(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = self
            .encoder
            .layers
            .iter()
            .enumerate()
            .map(|(k, w)| (format!("W{k}"), w))
            .collect();
        out.push(("W_concat".into(), &self.encoder.concat));
        out.push(("M".into(), &self.clusters.centers));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.encoder.layers.iter_mut().collect();
        out.push(&mut self.encoder.concat);
        out.push(&mut self.clusters.centers);
        out
    }

    /// Rebuilds parameters from blocks in [`ModelParams::blocks`] order.
    pub fn from_blocks(mut blocks: Vec<Matrix>) -> Result<Self> {
        if blocks.len() < 3 {
            return Err(Error::Format(format!("expected at least 3 parameter blocks, found {}", blocks.len())));
        }
        let centers = blocks.pop().unwrap();
        let concat = blocks.pop().unwrap();
        let p = Self {
            encoder: EncoderParams { layers: blocks, concat },
            clusters: ClusterParams { centers },
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.clusters.centers.cols() != self.encoder.dim() {
            return Err(Error::Shape {
                op: "cluster centers",
                lhs: self.clusters.centers.shape(),
                rhs: (self.clusters.clusters(), self.encoder.dim()),
            });
        }
        if !self.clusters.centers.is_finite() {
            return Err(Error::NonFinite("cluster centers".into()));
        }
        Ok(())
    }
}

/// Tape handles for every parameter block.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub encoder: EncoderVars,
    pub centers: Var,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Self {
        Self {
            encoder: EncoderVars::register(tape, &params.encoder),
            centers: tape.leaf(params.clusters.centers.clone()),
        }
    }

    /// Same order as [`ModelParams::blocks`].
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder.layers.clone();
        v.push(self.encoder.concat);
        v.push(self.centers);
        v
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub nodes: Var,
    pub assignment: Var,
    pub query: Var,
    pub alpha: Var,
    pub recon: Var,
    pub embeddings: Var,
    pub distances: Var,
    pub kernel: Var,
}

/// Records the whole forward pass for one batch.
pub fn forward(tape: &mut Tape, batch: &GraphBatch, vars: &ParamVars, kernel: &KernelConfig) -> Result<ForwardVars> {
    let normadj = Rc::new(normalized_adjacency(batch));
    let nodes = encode_on(tape, batch, normadj, &vars.encoder)?;
    let assignment = assign(tape, nodes, vars.centers)?;
    let q = query(tape, assignment, vars.centers)?;
    let recon = recon_loss(tape, nodes, q)?;
    let segments: Rc<[usize]> = batch.segments.clone().into();
    let (alpha, embeddings) = pool(tape, nodes, q, segments, batch.len())?;
    let (distances, kernel) = batch_matrices(tape, embeddings, kernel);
    Ok(ForwardVars {
        nodes,
        assignment,
        query: q,
        alpha,
        recon,
        embeddings,
        distances,
        kernel,
    })
}

/// Node-level outputs for one graph, used by the interpretation commands.
#[derive(Clone, Debug)]
pub struct GraphView {
    pub nodes: Matrix,
    pub assignment: Matrix,
    pub alpha: Vec<f64>,
    pub embedding: Vec<f64>,
}

pub fn inspect(graph: &PatientGraph, params: &ModelParams, cfg: &ModelConfig) -> Result<GraphView> {
    let batch = make_batch(&[graph], cfg.vocab_size, &cfg.batch)?;
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let f = forward(&mut tape, &batch, &vars, &cfg.kernel)?;
    Ok(GraphView {
        nodes: tape.value(f.nodes).clone(),
        assignment: tape.value(f.assignment).clone(),
        alpha: tape.value(f.alpha).data().to_vec(),
        embedding: tape.value(f.embeddings).data().to_vec(),
    })
}

/// Graph embeddings, one row per graph, computed in chunks of `chunk` graphs.
/// Graphs in a batch do not interact, so the chunk size does not change the
/// result beyond rounding.
pub fn embed(graphs: &[&PatientGraph], params: &ModelParams, cfg: &ModelConfig, chunk: usize) -> Result<Matrix> {
    if graphs.is_empty() {
        return Ok(Matrix::zeros(0, cfg.dim));
    }
    let mut parts = Vec::new();
    for group in graphs.chunks(chunk.max(1)) {
        let batch = make_batch(group, cfg.vocab_size, &cfg.batch)?;
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, params);
        let normadj = Rc::new(normalized_adjacency(&batch));
        let nodes = encode_on(&mut tape, &batch, normadj, &vars.encoder)?;
        let s = assign(&mut tape, nodes, vars.centers)?;
        let q = query(&mut tape, s, vars.centers)?;
        let (_, emb) = pool(&mut tape, nodes, q, batch.segments.clone().into(), batch.len())?;
        parts.push(tape.value(emb).clone());
    }
    let out = Matrix::vstack(&parts)?;
    if !out.is_finite() {
        return Err(Error::NonFinite("graph embeddings".into()));
    }
    Ok(out)
}
