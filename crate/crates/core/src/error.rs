use thiserror::Error;

use crate::solver::SolveTrace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("hologram kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },

    #[error("non-finite value at iteration {iteration}: {reason}")]
    NumericalAbort {
        iteration: usize,
        reason: String,
        trace: Box<SolveTrace>,
    },

    #[error("corrupt raster: {0}")]
    Corrupt(String),

    #[error("unsupported format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
