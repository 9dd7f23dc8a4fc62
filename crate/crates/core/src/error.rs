//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by simulation, model fitting, and estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad probabilities, thresholds, option ranges).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// A numeric routine failed (singular system, non-convergence, zero weight).
    #[error("estimation error: {0}")]
    Estimation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn estimation(msg: impl Into<String>) -> Self {
        Error::Estimation(msg.into())
    }
}
