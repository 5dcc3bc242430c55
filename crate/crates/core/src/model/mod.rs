//! Classifier contract, reference network, parameter EMA, gradient checking
//! and checkpoint storage.

pub mod checkpoint;
pub mod ema;
pub mod gradcheck;
pub mod net;
pub mod params;

pub use checkpoint::{Checkpoint, NamedArray};
pub use ema::EmaParams;
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, LossEvaluator};
pub use net::{Architecture, ForwardOutput, Network, Objective, SampleTape, Upstream};
pub use params::{Gradients, ModelParams, Tensor};
