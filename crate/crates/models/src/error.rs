use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Signal(#[from] resyn_core::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("input too short: {got:.3} s (need at least {min:.3} s)")]
    TooShort { got: f64, min: f64 },

    #[error("non-finite values at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("{what} changed during training (hash {before} -> {after})")]
    FrozenViolation {
        what: &'static str,
        before: String,
        after: String,
    },

    #[error("missing upstream checkpoint: {0}")]
    MissingCheckpoint(&'static str),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
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
