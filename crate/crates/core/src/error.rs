use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or settings that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("load error: {0}")]
    Load(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("sample error: {0}")]
    Sample(String),

    #[error("mapping error: {0}")]
    Mapping(String),

    #[error("optimizer error: non-finite gradient in slot `{slot}`")]
    Optimizer { slot: &'static str },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
