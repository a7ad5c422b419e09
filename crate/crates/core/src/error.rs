use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid network: {0}")]
    Validation(String),

    #[error("degenerate voltage at bus {bus} (|V| = {value:e})")]
    DegenerateVoltage { bus: usize, value: f64 },

    #[error("unknown location: {0}")]
    UnknownLocation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:e})")]
    NonConvergence { iterations: usize, mismatch: f64 },

    #[error("unobservable: {0}")]
    Unobservable(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at batch {batch}: {term}")]
    NonFiniteLoss { batch: usize, term: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
