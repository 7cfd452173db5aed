//! Dense matrices, parameter storage, and fixed-pattern reverse-mode
//! differentiation (linear / ReLU / softmax / soft-target cross entropy).

pub mod gradcheck;
mod matrix;
mod store;
mod tape;

pub use matrix::Matrix;
pub use store::{ParamId, ParamStore, Parameter};
pub use tape::{NodeId, Tape, LOG_FLOOR};
