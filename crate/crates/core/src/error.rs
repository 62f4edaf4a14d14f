use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("rating {0} is outside 1..=5")]
    RatingOutOfRange(i64),

    #[error("vocabulary is empty after filtering")]
    EmptyVocabulary,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("document {0} has no tokens")]
    EmptyDocument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid cache format: {0}")]
    CacheFormat(String),

    #[error("corrupted cache: record {record}: {message}")]
    CacheCorrupt { record: usize, message: String },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite loss for document {0}")]
    NonFinite(String),

    #[error("alignment error: {0}")]
    Alignment(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
