use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read or write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("dataset has {have} examples but at least {needed} are required")]
    DatasetTooSmall { needed: usize, have: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input sequence")]
    EmptyInput,

    #[error("empty input in batch row {0}")]
    EmptyInputAt(usize),

    #[error("vector norm is below 1e-12")]
    DegenerateNorm,

    #[error("correlation is undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for this failure: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Io { .. }
            | Error::Stream(_)
            | Error::Format(_)
            | Error::UnsupportedVersion { .. }
            | Error::Data(_)
            | Error::DatasetTooSmall { .. }
            | Error::EmptyInput
            | Error::EmptyInputAt(_)
            | Error::UnknownParameter(_) => 2,
            Error::DegenerateNorm
            | Error::UndefinedCorrelation(_)
            | Error::ShapeMismatch(_)
            | Error::IndexOutOfRange { .. }
            | Error::NonFinite(_) => 3,
        }
    }
}
