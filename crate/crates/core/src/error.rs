use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CorfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CorfError {
    #[error("shape mismatch: {what} (expected {expected}, got {got})")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid label {value}: {reason}")]
    InvalidLabel { value: f64, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CorfError {
    pub(crate) fn shape(what: &'static str, expected: usize, got: usize) -> Self {
        CorfError::Shape {
            what,
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CorfError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command-line front end.
    ///
    /// `1` usage/config, `2` data, `3` numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CorfError::Config(_) => 1,
            CorfError::Numeric(_) => 3,
            CorfError::Shape { .. }
            | CorfError::InvalidLabel { .. }
            | CorfError::Data { .. }
            | CorfError::Empty(_)
            | CorfError::UndefinedCorrelation(_)
            | CorfError::Checkpoint(_)
            | CorfError::Io { .. } => 2,
        }
    }
}
