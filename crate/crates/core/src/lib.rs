//! Semi-supervised long-tailed classification with an energy-score
//! pseudo-label gate, adaptive margin loss and adaptive hard triplet loss.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod data;
pub mod energy;
pub mod error;
pub mod exec;
pub mod losses;
pub mod model;
pub mod rng;
pub mod triplet;

pub use error::{Error, Result};
pub use exec::Exec;
pub mod report;
pub mod trainer;
