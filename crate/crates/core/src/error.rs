use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty waveform")]
    EmptyWaveform,

    #[error("invalid STFT config: {0}")]
    InvalidStft(String),

    #[error("spectrogram does not match config: {0}")]
    ConfigMismatch(String),

    #[error("invalid chunking: {0}")]
    InvalidChunk(String),

    #[error("unsupported sample rate {got} Hz (expected {expected} Hz)")]
    SampleRate { got: u32, expected: u32 },

    #[error("unsupported WAV format: {0}")]
    WavFormat(String),

    #[error("invalid room: {0}")]
    InvalidRoom(String),

    #[error("silent signal: {0}")]
    Silent(&'static str),

    #[error("SNR {0} dB outside the allowed range [5, 30]")]
    SnrOutOfRange(f64),

    #[error("unknown codec `{0}`")]
    UnknownCodec(String),

    #[error("noise bank is empty")]
    EmptyNoiseBank,

    #[error("noise id `{0}` not in bank")]
    UnknownNoise(String),

    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("feature extraction failed: {0}")]
    External(String),

    #[error("manifest {path}:{line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
