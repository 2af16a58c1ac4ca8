use thiserror::Error;

use crate::calibration::Calibrator;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Records cannot be assembled into a well-formed access.
    #[error("access {access_id}: {reason}")]
    Structural { access_id: String, reason: String },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("{channel}: expected {expected} quality values, got {got}")]
    Arity {
        channel: String,
        expected: usize,
        got: usize,
    },

    #[error("cannot impute {what}: no valid values to average")]
    Imputation { what: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("feature {index} is constant over the training data")]
    DegenerateFeature { index: usize },

    #[error("calibrator did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        last: Box<Calibrator>,
    },

    #[error("no fitted model for {0}")]
    MissingModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn insufficient(msg: impl Into<String>) -> Self {
        Error::InsufficientData(msg.into())
    }
}
