use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("i/o error")]
    Stream(#[from] io::Error),

    #[error("unsupported image: {0}")]
    UnsupportedFormat(String),

    #[error("malformed {what}: {msg}")]
    Malformed { what: &'static str, msg: String },

    #[error("{}:{line}: {msg}", path.display())]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("sample {index}: {msg}")]
    BadSample { index: usize, msg: String },

    #[error("label of length {label_len} needs at least {required} frames, sequence has {frames}")]
    LabelTooLong {
        label_len: usize,
        required: usize,
        frames: usize,
    },

    #[error("symbol index {index} is outside the output alphabet of size {size}")]
    UnknownSymbol { index: usize, size: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
