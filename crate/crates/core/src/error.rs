use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the crate.
///
/// Variants fall into three broad families which the command-line front end
/// maps to distinct exit codes: usage/config problems, data problems
/// (malformed or inconsistent inputs) and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("graph {graph}: self-edge on node {node}")]
    SelfEdge { graph: String, node: usize },

    #[error("graph {graph}: edge {src}->{dst} closes a cycle")]
    Cycle {
        graph: String,
        src: usize,
        dst: usize,
    },

    #[error("graph {graph}: {msg}")]
    InvalidGraph { graph: String, msg: String },

    #[error("unknown code {code:?}")]
    UnknownCode { code: String },

    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("vocabulary hash mismatch: checkpoint {expected:016x}, data {found:016x}")]
    VocabularyMismatch { expected: u64, found: u64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("kernel matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("labels contain a single class")]
    SingleClass,

    #[error("training diverged at epoch {epoch}, batch {batch}: {msg}")]
    Diverged {
        epoch: usize,
        batch: usize,
        msg: String,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("checksum mismatch")]
    Checksum,

    #[error("precision mismatch: file stores {found}, caller expects {expected}")]
    Precision {
        expected: &'static str,
        found: &'static str,
    },

    #[error("length mismatch: expected {expected}, got {found}")]
    Length { expected: usize, found: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::NonFinite(_)
            | Error::NotPsd(_)
            | Error::Diverged { .. }
            | Error::Shape { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}
