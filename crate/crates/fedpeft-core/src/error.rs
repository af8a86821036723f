//! Error type shared by all simulator modules.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented constraints.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Runtime input (token ids, batches, datasets) outside the contract.
    #[error("invalid input: {0}")]
    Input(String),

    /// An API contract was violated by the caller (e.g. gradients supplied
    /// for a frozen tensor).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Client/server exchange with mismatched tensor schemas.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A mathematically undefined quantity was requested.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed file content; carries the 1-based row or line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}
