use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("auction error: {0}")]
    Auction(String),

    #[error("value {value} lies outside the support [{lo}, {hi}]")]
    OutsideSupport { value: f64, lo: f64, hi: f64 },

    #[error("training diverged at iteration {iteration} (loss = {loss})")]
    Diverged { iteration: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Write(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Validation {
        field: field.into(),
        reason: reason.into(),
    }
}
