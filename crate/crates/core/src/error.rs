use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the measurement pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported LAS point data format {0} (supported: 0, 1, 2, 3)")]
    UnsupportedFormat(u8),

    #[error("degenerate calibration fit: fewer than two distinct voltages")]
    DegenerateFit,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("corpus error in region '{region}': {message}")]
    Corpus { region: String, message: String },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt checkpoint at byte offset {offset}: {message}")]
    Corruption { offset: usize, message: String },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("NSE is undefined when observations have zero variance")]
    UndefinedNse,

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
