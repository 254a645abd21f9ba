use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("data length {len} does not match shape {shape:?} (expected {expected})")]
    DataLength {
        shape: Vec<usize>,
        len: usize,
        expected: usize,
    },

    #[error("division by zero at flat offset {offset}")]
    DivisionByZero { offset: usize },

    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("stale trace: network has {expected} layers, trace has {actual}")]
    StaleTrace { expected: usize, actual: usize },

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("insufficient subjects for {class}: need {needed}, have {available}")]
    InsufficientSubjects {
        class: String,
        needed: usize,
        available: usize,
    },

    #[error("unknown region id {0}")]
    UnknownRegion(u32),

    #[error("format error in {path}: {msg}", path = .path.display())]
    Format { path: PathBuf, msg: String },

    #[error("truncated payload in {path}: expected {expected} bytes, found {actual}", path = .path.display())]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("I/O error on {path}: {source}", path = .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed or mismatching input data, as
    /// opposed to configuration mistakes or numerical failures.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format { .. }
                | Error::Truncated { .. }
                | Error::Io { .. }
                | Error::Json(_)
                | Error::ShapeMismatch { .. }
                | Error::DataLength { .. }
                | Error::UnknownRegion(_)
        )
    }
}
