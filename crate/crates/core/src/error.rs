use thiserror::Error;

/// Errors raised by the navigation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument or record violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A data series was shorter than the operation requires.
    #[error("series too short: need at least {required} samples, got {actual}")]
    TooShort { required: usize, actual: usize },

    /// A log that should have been static shows motion or drift.
    #[error("log is not stationary: {0}")]
    NotStationary(String),

    /// The error-state filter has left its linear regime.
    #[error("filter divergence: {0}")]
    Divergence(String),

    /// A covariance matrix failed its symmetry / semidefiniteness check.
    #[error("covariance not positive semidefinite: {0}")]
    NotPositiveSemidefinite(String),

    /// Innovation covariance too badly conditioned to invert.
    #[error("innovation covariance ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
