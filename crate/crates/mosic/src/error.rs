//! Error types shared across the library.

use thiserror::Error;

/// Unified error type for dataset handling, model fitting, and optimization.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or configuration value supplied by the caller.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Malformed or inconsistent input data (bad CSV cell, missing column, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A computation left the numerically valid regime (NaN, division by a
    /// vanished denominator, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand constructor for parameter errors.
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Shorthand constructor for data errors.
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Shorthand constructor for numerical errors.
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
