//! Crate-wide error type.

use thiserror::Error;

/// Errors shared by all modules of this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix handed to a factorization or density was not positive
    /// definite. Carries the offending pivot and its index.
    #[error("matrix not positive definite: pivot {pivot:e} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// Vector/matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// A parameter is outside the domain of the requested operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// None of the optimizer starts converged to a finite optimum.
    #[error("fit diverged: no start converged")]
    FitDiverged,

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    /// A persisted file does not match the expected schema.
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
