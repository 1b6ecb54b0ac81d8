//! Residual hierarchical interactive scoring for multi-aspect, multi-granularity
//! pronunciation assessment.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! - [`tensor`]: a small dense f64 tensor with a reverse-mode differentiation graph,
//! - [`gop`]: goodness-of-pronunciation features from frame posteriors,
//! - [`data`]: utterance samples, batching, synthetic corpora and score correlations,
//! - [`model`]: the encoder, interactive attention module and hierarchical score heads,
//! - [`train`]: losses, Adam, the learning-rate schedule and the epoch loop,
//! - [`metrics`]: MSE and Pearson correlation reports.
//!
//! File formats, the experiment harness and the command line live in the `hia` crate.
#![no_std]
// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod gop;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};

/// Number of pure phones in the GOP inventory.
pub const NUM_PHONES: usize = 42;
/// Length of one GOP feature vector (42 LPP values followed by 42 LPR values).
pub const GOP_DIM: usize = 2 * NUM_PHONES;
/// Word-level aspects: accuracy, stress, total.
pub const WORD_ASPECTS: usize = 3;
/// Utterance-level aspects: accuracy, completeness, fluency, prosodic, total.
pub const UTT_ASPECTS: usize = 5;
