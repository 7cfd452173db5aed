//! Multimodal classification with sustained boosting.

pub mod aca;
pub mod boostloss;
pub mod checkpoint;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod theory;

pub use error::{Error, Result};
