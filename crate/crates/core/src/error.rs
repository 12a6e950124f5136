use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("step {t} out of range (horizon {horizon})")]
    StepOutOfRange { t: usize, horizon: usize },

    #[error("empty sample buffer")]
    EmptyBuffer,

    #[error("empty evaluation range")]
    EmptyRange,

    #[error("KKT system singular after ridge regularization (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("infeasible constraint: query lies outside the affine hull of the data")]
    Infeasible,

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("missing cell (t={t}, i={i}, j={j})")]
    MissingCell { t: usize, i: usize, j: usize },

    #[error("cloud factor {value} out of range [0,1] at (t={t}, i={i}, j={j})")]
    OutOfRange { t: usize, i: usize, j: usize, value: f64 },

    #[error("non-finite state at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by user input (bad configuration or parameters),
    /// as opposed to failures during a run.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidParameter(_) | Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
