//! Node matching heatmaps, nearest training cases and top support vectors.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::graphdata::PatientGraph;
use crate::matching::{diagonal_argmax_rate, hard_clusters, match_matrix};
use crate::model::inspect;
use crate::svm::top_support_vectors;
use crate::trainer::Checkpoint;

#[derive(Clone, Debug)]
pub struct MatchReport {
    pub matrix: Matrix,
    pub clusters_a: Vec<usize>,
    pub clusters_b: Vec<usize>,
    pub alpha_a: Vec<f64>,
    pub alpha_b: Vec<f64>,
    /// Only for graphs with equal node counts.
    pub diagonal_rate: Option<f64>,
}

impl MatchReport {
    /// Heatmap as CSV, one row per node of graph a.
    pub fn heatmap_csv(&self) -> String {
        let mut s = String::from("node");
        for j in 0..self.matrix.cols() {
            let _ = write!(s, ",b{j}");
        }
        s.push('\n');
        for i in 0..self.matrix.rows() {
            let _ = write!(s, "a{i}");
            for v in self.matrix.row(i) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Per-node cluster ids and attention scores for both graphs.
    pub fn nodes_csv(&self, a: &PatientGraph, b: &PatientGraph, code: impl Fn(usize) -> String) -> String {
        let mut s = String::from("graph,node,code,cluster,alpha\n");
        for (tag, g, clusters, alpha) in [
            ("a", a, &self.clusters_a, &self.alpha_a),
            ("b", b, &self.clusters_b, &self.alpha_b),
        ] {
            for (i, &c) in g.nodes.iter().enumerate() {
                let _ = writeln!(s, "{tag},{i},{},{},{}", code(c), clusters[i], alpha[i]);
            }
        }
        s
    }
}

pub fn cmd_match(ck: &Checkpoint, a: &PatientGraph, b: &PatientGraph) -> Result<MatchReport> {
    let va = inspect(a, &ck.params, &ck.model)?;
    let vb = inspect(b, &ck.params, &ck.model)?;
    let matrix = match_matrix(&va.assignment, &vb.assignment)?;
    let diagonal_rate = diagonal_argmax_rate(&matrix);
    Ok(MatchReport {
        clusters_a: hard_clusters(&va.assignment),
        clusters_b: hard_clusters(&vb.assignment),
        alpha_a: va.alpha,
        alpha_b: vb.alpha,
        diagonal_rate,
        matrix,
    })
}

/// Copy of `g` with every node code drawn uniformly from the vocabulary and
/// all edges removed.
pub fn perturb_graph<R: Rng>(g: &PatientGraph, vocab_size: usize, rng: &mut R) -> PatientGraph {
    PatientGraph {
        id: format!("{}-perturbed", g.id),
        label: g.label,
        nodes: g.nodes.iter().map(|_| rng.gen_range(0..vocab_size)).collect(),
        edges: Vec::new(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub label: u8,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainReport {
    /// Training graphs with the largest kernel value against the query.
    pub similar: Vec<Neighbor>,
    /// Support vectors with the largest `|alpha|`; `score` holds `|alpha|`.
    pub support: Vec<Neighbor>,
}

pub fn cmd_explain(ck: &Checkpoint, query: &PatientGraph, k: usize) -> Result<ExplainReport> {
    if k < 1 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let row = ck.kernel_rows(&[query])?;
    let mut ranked: Vec<usize> = (0..ck.train_ids.len()).collect();
    let kv = row.row(0);
    ranked.sort_by(|&i, &j| kv[j].total_cmp(&kv[i]).then_with(|| ck.train_ids[i].cmp(&ck.train_ids[j])));
    let similar = ranked
        .into_iter()
        .take(k)
        .map(|i| Neighbor {
            id: ck.train_ids[i].clone(),
            label: ck.train_labels[i],
            score: kv[i],
        })
        .collect();
    let support = top_support_vectors(&ck.svm, k)
        .into_iter()
        .map(|(i, a)| Neighbor {
            id: ck.train_ids[i].clone(),
            label: ck.train_labels[i],
            score: a,
        })
        .collect();
    Ok(ExplainReport { similar, support })
}
