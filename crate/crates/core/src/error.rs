use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("batch of size {0} cannot be normalized in train mode")]
    DegenerateBatch(usize),

    #[error("layer {0} cannot be permuted (only hidden layers can)")]
    InvalidLayer(usize),

    #[error("pruning would leave layer {0} without neurons")]
    DegenerateNetwork(usize),

    #[error("non-finite value in layer {layer}: {what}")]
    Numerical { layer: usize, what: String },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) | Error::InvalidLayer(_) => 1,
            Error::Numerical { .. } | Error::Divergence(_) => 3,
            _ => 2,
        }
    }
}
