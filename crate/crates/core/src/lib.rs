//! Building blocks for a hybrid SSVEP speller decoder.
//!
//! - [`numcore`]: tensors, reverse-mode autodiff, layers, losses, Adam.
//! - [`sigproc`]: Chebyshev filtering, decimation, segmentation, synthetic trials.
//! - [`augment`]: the six training-time augmentation operators.
//! - [`models`]: EEGNet and CharRNN with their training loops.
//! - [`corpus`]: data partitioning, word stitching, text normalization.
//! - [`fusion`]: probability fusion and sequential word decoding.
//! - [`harness`]: run configs, commands and CSV reports behind the CLI.

// validation uses `!(x > 0.0)` on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod corpus;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod io;
pub mod models;
pub mod numcore;
pub mod sigproc;

pub use error::{Error, Result};
pub use numcore::{Tensor, TrainConfig};
