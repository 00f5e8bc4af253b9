//! Patient graphs, vocabularies, the JSONL interchange format and
//! block-diagonal batching.
//!
//! A patient graph is a directed acyclic graph of coded events. Edge weights
//! are time gaps in days; self-edges are forbidden in the input because the
//! convolution adds unit self-loops itself.
//!
//! JSONL format, one graph per line:
//!
//! ```text
//! {"id":"p1","label":1,"nodes":["SEX:F","DX000","RX003"],"edges":[[0,1,52.0],[1,2,7.0]]}
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::{CsrMatrix, Matrix};
use crate::error::{Error, Result};

/// Bijective map between code strings and dense ids `0..c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    codes: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(codes: impl IntoIterator<Item = S>) -> Result<Self> {
        let codes: Vec<String> = codes.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(codes.len());
        for (i, c) in codes.iter().enumerate() {
            if c.is_empty() || c.trim() != c || c.contains('\n') {
                return Err(Error::Vocabulary(format!("invalid code {c:?} at id {i}")));
            }
            if index.insert(c.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate code {c:?}")));
            }
        }
        Ok(Self { codes, index })
    }

    /// Parses the one-code-per-line format; the line number is the id.
    pub fn parse(text: &str) -> Result<Self> {
        let mut codes = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: "empty vocabulary entry".into(),
                });
            }
            codes.push(line.to_string());
        }
        Self::new(codes).map_err(|e| match e {
            Error::Vocabulary(msg) => Error::Parse { line: 0, msg },
            other => other,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.codes {
            s.push_str(c);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn id(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn code(&self, id: usize) -> &str {
        &self.codes[id]
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    /// FNV-1a over the newline-terminated codes, in id order.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for c in &self.codes {
            for b in c.bytes().chain(std::iter::once(b'\n')) {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    fn intern(&mut self, code: &str) -> usize {
        if let Some(&i) = self.index.get(code) {
            return i;
        }
        let i = self.codes.len();
        self.codes.push(code.to_string());
        self.index.insert(code.to_string(), i);
        i
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    /// Time gap in days.
    pub weight: f64,
}

/// Directed weighted DAG of coded events with a binary outcome
/// (1 = success, 0 = failure).
#[derive(Clone, Debug, PartialEq)]
pub struct PatientGraph {
    pub id: String,
    pub label: u8,
    /// Code id of each node.
    pub nodes: Vec<usize>,
    pub edges: Vec<Edge>,
}

impl PatientGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Checks the structural invariants: non-empty, valid codes and endpoints,
    /// no self-edges, finite non-negative weights, acyclic.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let bad = |msg: String| Error::InvalidGraph {
            graph: self.id.clone(),
            msg,
        };
        if self.nodes.is_empty() {
            return Err(bad("graph has no nodes".into()));
        }
        if self.label > 1 {
            return Err(bad(format!("label must be 0 or 1, got {}", self.label)));
        }
        if let Some(&c) = self.nodes.iter().find(|&&c| c >= vocab_size) {
            return Err(bad(format!("code id {c} outside vocabulary of size {vocab_size}")));
        }
        let n = self.nodes.len();
        for e in &self.edges {
            if e.src >= n || e.dst >= n {
                return Err(bad(format!("edge {}->{} out of range for {n} nodes", e.src, e.dst)));
            }
            if e.src == e.dst {
                return Err(Error::SelfEdge {
                    graph: self.id.clone(),
                    node: e.src,
                });
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(bad(format!("edge {}->{} has invalid weight {}", e.src, e.dst, e.weight)));
            }
        }
        if let Some((src, dst)) = self.find_cycle_edge() {
            return Err(Error::Cycle {
                graph: self.id.clone(),
                src,
                dst,
            });
        }
        Ok(())
    }

    /// First back edge found by a depth-first search, if any.
    fn find_cycle_edge(&self) -> Option<(usize, usize)> {
        let n = self.nodes.len();
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &self.edges {
            out[e.src].push(e.dst);
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; n];
        let mut stack: Vec<(usize, usize)> = Vec::new();
        for root in 0..n {
            if state[root] != 0 {
                continue;
            }
            state[root] = 1;
            stack.push((root, 0));
            while let Some(&mut (u, ref mut next)) = stack.last_mut() {
                if *next < out[u].len() {
                    let v = out[u][*next];
                    *next += 1;
                    match state[v] {
                        0 => {
                            state[v] = 1;
                            stack.push((v, 0));
                        }
                        1 => return Some((u, v)),
                        _ => {}
                    }
                } else {
                    state[u] = 2;
                    stack.pop();
                }
            }
        }
        None
    }

    /// Node order consistent with edge direction.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &self.edges {
            out[e.src].push(e.dst);
            indeg[e.dst] += 1;
        }
        let mut queue: std::collections::VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in &out[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    queue.push_back(v);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> PatientGraph {
        assert_eq!(perm.len(), self.nodes.len());
        let mut nodes = vec![0; self.nodes.len()];
        for (i, &p) in perm.iter().enumerate() {
            nodes[p] = self.nodes[i];
        }
        PatientGraph {
            id: self.id.clone(),
            label: self.label,
            nodes,
            edges: self
                .edges
                .iter()
                .map(|e| Edge {
                    src: perm[e.src],
                    dst: perm[e.dst],
                    weight: e.weight,
                })
                .collect(),
        }
    }
}

/// Graphs together with the vocabulary their code ids refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub graphs: Vec<PatientGraph>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    id: String,
    label: u8,
    nodes: Vec<String>,
    edges: Vec<(usize, usize, f64)>,
}

/// Parses JSONL graphs. With `vocab` supplied every code must already be in
/// it; otherwise a vocabulary is built in order of first appearance.
pub fn parse_graphs(text: &str, vocab: Option<&Vocabulary>) -> Result<Dataset> {
    let mut building = match vocab {
        Some(v) => v.clone(),
        None => Vocabulary::new(Vec::<String>::new())?,
    };
    let fixed = vocab.is_some();
    let mut graphs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GraphRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let mut nodes = Vec::with_capacity(rec.nodes.len());
        for code in &rec.nodes {
            let id = if fixed {
                building.id(code).ok_or_else(|| Error::UnknownCode { code: code.clone() })?
            } else {
                if code.is_empty() || code.trim() != code {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("invalid code {code:?}"),
                    });
                }
                building.intern(code)
            };
            nodes.push(id);
        }
        let graph = PatientGraph {
            id: rec.id,
            label: rec.label,
            nodes,
            edges: rec
                .edges
                .into_iter()
                .map(|(src, dst, weight)| Edge { src, dst, weight })
                .collect(),
        };
        graph.validate(building.len())?;
        graphs.push(graph);
    }
    Ok(Dataset {
        vocab: building,
        graphs,
    })
}

pub fn load_graphs(path: impl AsRef<Path>, vocab: Option<&Vocabulary>) -> Result<Dataset> {
    parse_graphs(&std::fs::read_to_string(path)?, vocab)
}

/// Serializes graphs to JSONL using `vocab` to name codes.
pub fn write_graphs(graphs: &[PatientGraph], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for g in graphs {
        let rec = GraphRecord {
            id: g.id.clone(),
            label: g.label,
            nodes: g.nodes.iter().map(|&c| vocab.code(c).to_string()).collect(),
            edges: g.edges.iter().map(|e| (e.src, e.dst, e.weight)).collect(),
        };
        let line = serde_json::to_string(&rec).expect("graph record serializes");
        let _ = writeln!(out, "{line}");
    }
    out
}

pub fn save_graphs(path: impl AsRef<Path>, graphs: &[PatientGraph], vocab: &Vocabulary) -> Result<()> {
    Ok(std::fs::write(path, write_graphs(graphs, vocab))?)
}

/// Transform applied to raw day-gap weights before normalization.
///
/// Under `Log1p` a same-day edge (weight 0) contributes nothing to the
/// adjacency.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeTransform {
    Identity,
    #[default]
    Log1p,
}

impl EdgeTransform {
    pub fn apply(self, w: f64) -> f64 {
        match self {
            EdgeTransform::Identity => w,
            EdgeTransform::Log1p => w.ln_1p(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchOptions {
    pub transform: EdgeTransform,
    /// Mirror every edge; off by default so aggregation follows edge direction.
    pub symmetrize: bool,
}

/// Several graphs concatenated into one block-diagonal graph.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    /// Code id of every node; row `i` of the one-hot feature matrix has its 1
    /// in column `codes[i]`.
    pub codes: Vec<usize>,
    pub vocab_size: usize,
    /// Transformed edge weights, without self-loops.
    pub adjacency: CsrMatrix,
    pub segments: Vec<usize>,
    pub labels: Vec<u8>,
    pub sizes: Vec<usize>,
}

impl GraphBatch {
    pub fn total_nodes(&self) -> usize {
        self.codes.len()
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Dense one-hot feature matrix (`total_nodes x vocab_size`).
    pub fn features(&self) -> Matrix {
        let mut x = Matrix::zeros(self.codes.len(), self.vocab_size);
        for (i, &c) in self.codes.iter().enumerate() {
            x.set(i, c, 1.0);
        }
        x
    }

    /// First node index of each graph.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.sizes
            .iter()
            .map(|s| {
                let o = acc;
                acc += s;
                o
            })
            .collect()
    }
}

pub fn make_batch(graphs: &[&PatientGraph], vocab_size: usize, opts: &BatchOptions) -> Result<GraphBatch> {
    if graphs.is_empty() {
        return Err(Error::Empty("graph batch"));
    }
    let total: usize = graphs.iter().map(|g| g.len()).sum();
    let mut codes = Vec::with_capacity(total);
    let mut segments = Vec::with_capacity(total);
    let mut triplets = Vec::new();
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        if let Some(&c) = g.nodes.iter().find(|&&c| c >= vocab_size) {
            return Err(Error::InvalidGraph {
                graph: g.id.clone(),
                msg: format!("code id {c} outside vocabulary of size {vocab_size}"),
            });
        }
        codes.extend_from_slice(&g.nodes);
        segments.extend(std::iter::repeat_n(gi, g.len()));
        for e in &g.edges {
            let w = opts.transform.apply(e.weight);
            triplets.push((offset + e.src, offset + e.dst, w));
            if opts.symmetrize {
                triplets.push((offset + e.dst, offset + e.src, w));
            }
        }
        offset += g.len();
    }
    Ok(GraphBatch {
        codes,
        vocab_size,
        adjacency: CsrMatrix::from_triplets(total, &triplets),
        segments,
        labels: graphs.iter().map(|g| g.label).collect(),
        sizes: graphs.iter().map(|g| g.len()).collect(),
    })
}

/// Row-normalized adjacency with unit self-loops, `D^-1 (A + I)`.
pub fn normalized_adjacency(batch: &GraphBatch) -> CsrMatrix {
    let n = batch.total_nodes();
    let mut triplets = batch.adjacency.triplets();
    triplets.extend((0..n).map(|i| (i, i, 1.0)));
    CsrMatrix::from_triplets(n, &triplets).row_normalized()
}
