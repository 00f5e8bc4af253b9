//! Dense matrices, a reverse-mode tape over them, sparsemax and a
//! finite-difference gradient checker.

mod gradcheck;
mod matrix;
mod sparse;
mod sparsemax;
mod tape;

pub use gradcheck::{gradcheck, BlockReport, GradcheckReport};
pub use matrix::{dot, norm, Matrix};
pub use sparse::CsrMatrix;
pub use sparsemax::{segment_spans, softmax, sparsemax, sparsemax_into};
pub use tape::{cosine, Gradients, Tape, Var};
pub(crate) use tape::euclid;
