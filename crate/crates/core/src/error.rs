use std::path::PathBuf;

use thiserror::Error;

use crate::mp::NotConverged;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("topology islands the grid: {unreachable} of {buses} energized buses are not connected to the slack bus")]
    IslandedGrid { buses: usize, unreachable: usize },

    #[error("reduced nodal matrix is singular (dimension {dim})")]
    SingularSystem { dim: usize },

    #[error("no admissible draw after {attempts} attempts while sampling {what}")]
    RetriesExhausted { what: &'static str, attempts: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error(transparent)]
    NotConverged(#[from] NotConverged),

    #[error("no entries left to evaluate {0}")]
    EmptySelection(&'static str),

    #[error("malformed data in {path}: {reason}")]
    MalformedData { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MalformedData {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
