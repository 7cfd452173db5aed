//! Crate-wide error type and result alias.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix dimension disagreement; carries a human-readable dimension report.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Invalid argument outside shape issues (ranges, empty inputs, bad spec).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Configuration file or CLI configuration problem. Maps to exit code 2.
    #[error("config error: {0}")]
    Config(String),

    /// Non-finite value where a finite one is required. Maps to exit code 3.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed input file; line is 1-based where known.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A simulated trace violated the theoretical bound. Maps to exit code 4.
    #[error("theory bound violated: {0}")]
    BoundViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    /// Process exit code for the CLI: 0 ok, 2 config, 3 numeric, 4 theory bound.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } => 2,
            Error::Numeric(_) => 3,
            Error::BoundViolation(_) => 4,
            _ => 1,
        }
    }
}
