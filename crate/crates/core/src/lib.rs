//! Spatio-temporal grounding toolkit.
//!
//! - [`numkit`]: dense `f64` tensors, seeded RNG, `STT1` tensor files
//! - [`codec`]: coordinate special tokens, boxes, spans and tubes
//! - [`lape`]: positional embeddings built from coordinate-token rows
//! - [`stp`]: the two-stream spatial-temporal packer
//! - [`metrics`]: tIoU / sIoU / box IoU scoring and aggregation
//! - [`forge`]: templated instruction samples
//! - [`selftest`]: embedded invariant checks
//!
//! The `parallel` feature (on by default) runs the inner loops on rayon;
//! results are identical with it off.

pub mod codec;
mod error;
pub mod forge;
pub mod lape;
pub mod metrics;
pub mod numkit;
pub mod par;
pub mod selftest;
pub mod stp;

pub use error::{Error, Result};
pub use par::Exec;
