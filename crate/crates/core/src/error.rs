use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("signal too short: {samples} samples, need at least {frame_length} for one frame")]
    TooShort { samples: usize, frame_length: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),

    #[error("unvoiced utterance: no voiced frames")]
    UnvoicedUtterance,

    #[error("degenerate feature {0}: zero standard deviation")]
    DegenerateFeature(&'static str),

    #[error("word index {index} out of range for {words} word(s)")]
    WordIndexOutOfRange { index: usize, words: usize },

    #[error("non-finite {term} at step {step}")]
    NonFinite { term: String, step: usize },

    #[error("model not usable: {0}")]
    BadModel(String),

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
