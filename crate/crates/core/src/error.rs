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
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no valid records found: {0}")]
    EmptyDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("need at least {needed} rows to seed {needed} centroids, got {available}")]
    NotEnoughRows { needed: usize, available: usize },

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("unknown token id {0}")]
    UnknownToken(u32),

    #[error("prefix is not a path in the trie")]
    InvalidPrefix,

    #[error("duplicate code tuple {codes:?} for items `{first}` and `{second}`")]
    DuplicateCode {
        codes: Vec<u32>,
        first: String,
        second: String,
    },

    #[error("duplicate {0}")]
    Duplicate(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
