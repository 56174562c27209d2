use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("{path}: missing or malformed header key `{key}`: {reason}")]
    Header {
        path: PathBuf,
        key: String,
        reason: String,
    },

    #[error("{path}: payload holds {actual} bytes, header implies {expected}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("empty structure: {0}")]
    EmptyStructure(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn header(path: impl Into<PathBuf>, key: &str, reason: impl Into<String>) -> Self {
        Error::Header {
            path: path.into(),
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}
