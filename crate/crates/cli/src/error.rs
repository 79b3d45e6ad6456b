use std::path::PathBuf;

use crate::pipeline::Stage;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] resyn_models::Error),

    #[error(transparent)]
    Signal(#[from] resyn_core::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("stage `{needed_by}` needs the `{stage}` checkpoint, not found under {path}")]
    MissingCheckpoint {
        stage: Stage,
        needed_by: String,
        path: PathBuf,
    },

    #[error("checkpoint {path} is corrupt: {msg}")]
    CorruptCheckpoint { path: PathBuf, msg: String },

    #[error("invalid shard {index} of {count}")]
    Shard { index: usize, count: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    TomlParse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },

    #[error(transparent)]
    TomlWrite(#[from] toml::ser::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("worker thread failed: {0}")]
    Worker(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
