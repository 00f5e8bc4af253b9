//! Cross-global attention graph kernel network for patient event graphs.
//!
//! Graphs are encoded by stacked graph convolutions, their nodes are softly
//! matched against shared global clusters, and attention-pooled graph
//! embeddings define the kernel `exp(-Dist^2)` that feeds a kernel SVM.

pub mod diffcore;
pub mod encoder;
pub mod error;
pub mod graphdata;
pub mod interpret;
pub mod kernelspace;
pub mod losses;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod svm;
pub mod syndata;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
