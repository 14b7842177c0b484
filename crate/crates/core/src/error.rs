use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = OalError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OalError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid value for `{key}`: {message}")]
    ConfigKey { key: String, message: String },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("record `{id}`: {message}")]
    Record { id: String, message: String },

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("malformed feature file: {0}")]
    FeatureFormat(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl OalError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OalError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn key(key: impl Into<String>, message: impl Into<String>) -> Self {
        OalError::ConfigKey {
            key: key.into(),
            message: message.into(),
        }
    }
}
