//! Cross-global attention node matching.
//!
//! Nodes are softly assigned to `s` trainable global clusters with sparsemax;
//! each node's query is the tanh of its assignment-weighted cluster mix. Nodes
//! that reconstruct well from their clusters receive more attention in the
//! graph-level weighted sum. Because every graph in a batch is matched against
//! the same global clusters, two nodes in different graphs "match" when they
//! share cluster membership, with no pairwise comparison.

use std::rc::Rc;

use rand::Rng;

use crate::diffcore::{Matrix, Tape, Var};
use crate::encoder::glorot_uniform;
use crate::error::{Error, Result};

/// Norm guard used by the pooling similarity.
pub const POOL_EPS: f64 = 1e-12;

/// Global node cluster matrix `M` (`s x d`).
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterParams {
    pub centers: Matrix,
}

impl ClusterParams {
    pub fn init<R: Rng>(clusters: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if clusters == 0 {
            return Err(Error::Config("cluster count must be at least 1".into()));
        }
        Ok(Self {
            centers: glorot_uniform(clusters, dim, rng),
        })
    }

    pub fn clusters(&self) -> usize {
        self.centers.rows()
    }
}

/// Values produced by the matching stage for one batch.
#[derive(Clone, Debug)]
pub struct MatchingOutput {
    pub assignment: Matrix,
    pub query: Matrix,
    pub alpha: Vec<f64>,
    pub recon: f64,
    pub graph_embeddings: Matrix,
}

/// `S = sparsemax(ReLU(H_final M^T))`.
pub fn assign(tape: &mut Tape, h_final: Var, centers: Var) -> Result<Var> {
    let scores = tape.matmul_t(h_final, centers)?;
    let scores = tape.relu(scores);
    tape.sparsemax(scores)
}

/// `Q = tanh(S M)`.
pub fn query(tape: &mut Tape, assignment: Var, centers: Var) -> Result<Var> {
    let mix = tape.matmul(assignment, centers)?;
    Ok(tape.tanh(mix))
}

/// `||H_final - Q||_F`, unsquared.
pub fn recon_loss(tape: &mut Tape, h_final: Var, query: Var) -> Result<Var> {
    let diff = tape.sub(h_final, query)?;
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    Ok(tape.sqrt(total))
}

/// Attention pooling. Returns `(alpha, G_emb)` where `alpha` is the
/// per-graph softmax of `cos(H_final_i, Q_i)` and row `g` of `G_emb` is
/// `sum_i alpha_i H_final_i` over the nodes of graph `g`.
pub fn pool(
    tape: &mut Tape,
    h_final: Var,
    query: Var,
    segments: Rc<[usize]>,
    graphs: usize,
) -> Result<(Var, Var)> {
    let scores = tape.row_cosine(h_final, query, POOL_EPS)?;
    let alpha = tape.segment_softmax(scores, segments.clone())?;
    let emb = tape.segment_weighted_sum(alpha, h_final, segments, graphs)?;
    Ok((alpha, emb))
}

/// Value-only [`assign`].
pub fn assign_values(h_final: &Matrix, centers: &Matrix) -> Result<Matrix> {
    let mut t = Tape::new();
    let (h, m) = (t.leaf(h_final.clone()), t.leaf(centers.clone()));
    let s = assign(&mut t, h, m)?;
    Ok(t.value(s).clone())
}

/// Value-only [`query`].
pub fn query_values(assignment: &Matrix, centers: &Matrix) -> Result<Matrix> {
    let mut t = Tape::new();
    let (s, m) = (t.leaf(assignment.clone()), t.leaf(centers.clone()));
    let q = query(&mut t, s, m)?;
    Ok(t.value(q).clone())
}

/// Value-only [`recon_loss`].
pub fn recon_value(h_final: &Matrix, query_m: &Matrix) -> Result<f64> {
    let mut t = Tape::new();
    let (h, q) = (t.leaf(h_final.clone()), t.leaf(query_m.clone()));
    let r = recon_loss(&mut t, h, q)?;
    Ok(t.value(r).item())
}

/// Value-only [`pool`].
pub fn pool_values(h_final: &Matrix, query_m: &Matrix, segments: &[usize], graphs: usize) -> Result<(Vec<f64>, Matrix)> {
    let mut t = Tape::new();
    let (h, q) = (t.leaf(h_final.clone()), t.leaf(query_m.clone()));
    let (a, e) = pool(&mut t, h, q, segments.into(), graphs)?;
    Ok((t.value(a).data().to_vec(), t.value(e).clone()))
}

/// Pairwise cluster-membership agreement `S1 S2^T` between the nodes of two
/// graphs.
pub fn match_matrix(s1: &Matrix, s2: &Matrix) -> Result<Matrix> {
    if s1.cols() != s2.cols() {
        return Err(Error::Shape {
            op: "match_matrix",
            lhs: s1.shape(),
            rhs: s2.shape(),
        });
    }
    s1.matmul_t(s2)
}

/// Hard cluster of each node: the largest entry of its assignment row
/// (lowest index on ties).
pub fn hard_clusters(assignment: &Matrix) -> Vec<usize> {
    (0..assignment.rows())
        .map(|r| {
            let row = assignment.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Fraction of rows of a square match matrix whose diagonal entry is positive
/// and attains the row maximum. `None` for non-square input.
pub fn diagonal_argmax_rate(m: &Matrix) -> Option<f64> {
    if m.rows() != m.cols() || m.rows() == 0 {
        return None;
    }
    let hits = (0..m.rows())
        .filter(|&i| {
            let row = m.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row[i] > 0.0 && row[i] >= max - 1e-12 * max.abs()
        })
        .count();
    Some(hits as f64 / m.rows() as f64)
}
