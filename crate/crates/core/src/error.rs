use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("pilot matrix columns are not orthogonal (max Gram deviation {0:.3e})")]
    NonOrthogonalPilots(f64),

    #[error("calibration ensemble has {samples} samples, need at least {required}")]
    InsufficientSamples { samples: usize, required: usize },

    #[error("subset count {count} exceeds the exhaustive-search guard of {limit}")]
    SearchTooLarge { count: u128, limit: u128 },

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}
