//! Executable front end: configuration, the training loop, evaluation,
//! sweeps, and run logging.

pub mod config;
pub mod eval;
pub mod runlog;
pub mod sweep;
pub mod train;

pub use config::{ExperimentConfig, SeedPlan};
pub use eval::{evaluate, EvalReport};
pub use runlog::RunLog;
pub use train::{train, TrainOutput};
