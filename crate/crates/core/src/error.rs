use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown {what}: {name}")]
    Unknown { what: &'static str, name: String },

    #[error("numerical divergence at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("task infeasible: {0}")]
    Infeasible(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
