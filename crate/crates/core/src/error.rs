use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the lake toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Array or matrix dimensions disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A time-series file could not be parsed or failed validation.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A closed-loop run could not continue.
    #[error("run failed at hour {hour}: {message}")]
    Run { hour: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
