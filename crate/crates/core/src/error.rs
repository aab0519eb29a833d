use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("vocabulary is empty after filtering")]
    EmptyVocabulary,

    #[error("corpus has no retained tokens")]
    NoTokens,

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("divergence is infinite: reference has zero mass at index {0}")]
    InfiniteDivergence(usize),

    #[error("topic has zero similarity to every topic of model {0}")]
    DegenerateMatch(usize),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("unknown topic {model}/{topic}")]
    UnknownTopic { model: usize, topic: usize },

    #[error("{0} is not available for this ensemble")]
    Unavailable(&'static str),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{file}: {message}")]
    Structure { file: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
