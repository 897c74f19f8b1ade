use std::path::PathBuf;

use thiserror::Error;

/// Failures while decoding one of the grid file formats.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid label byte {value} at index {index}")]
    InvalidLabel { index: usize, value: u8 },
    #[error("{extra} unexpected bytes after payload")]
    TrailingData { extra: usize },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("query ({x}, {y}) outside the grid extent")]
    OutOfExtent { x: f64, y: f64 },
    #[error("degenerate plane fit through footpads")]
    DegeneratePlane,
    #[error("training failed: {0}")]
    Training(String),
    #[error("threshold calibration failed: {0}")]
    Calibration(String),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
