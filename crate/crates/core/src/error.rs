use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("box at ({row}, {col}) of width {width} exceeds {height}x{map_width} map")]
    OutOfBounds {
        row: usize,
        col: usize,
        width: usize,
        height: usize,
        map_width: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("pixel ({row}, {col}) sums to {sum}, not 1")]
    Denormalized { row: usize, col: usize, sum: f32 },

    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Untrainable(String),

    #[error("adapter failure: {0}")]
    Adapter(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    IoBare(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
