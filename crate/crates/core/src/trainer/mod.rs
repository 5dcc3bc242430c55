//! The optimization loop: batches, views, gate, losses, SGD and EMA.

pub mod config;
pub mod fit;
pub mod schedule;
pub mod step;

pub use config::{default_tau_e, default_temperature, GateKind, TrainConfig};
pub use fit::{fit, load_eval_model, EvalRecord, FitOptions, FitOutcome};
pub use schedule::{lr_schedule, Schedule};
pub use step::{apply_sgd, StepMetrics, TrainState, Trainer};
