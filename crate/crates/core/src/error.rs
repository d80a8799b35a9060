//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by models, losses, data loaders, and the trainer.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible matrix or vector shapes.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Input data violates a documented precondition.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A computed value left the finite range.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A binary file did not match its expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// A training step aborted; `step` is the 1-based global step index.
    #[error("training step {step} failed: {source}")]
    Step {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    /// A run inside a multi-run protocol failed; `run` is 1-based.
    #[error("run {run} failed: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
