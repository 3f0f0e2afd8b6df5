use std::path::PathBuf;

use evhar_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("insufficient input: {0}")]
    InsufficientInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("class {0} has no samples")]
    DegenerateClass(usize),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("cannot evaluate an empty prediction set")]
    EmptyEvaluation,

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user-supplied settings rather than by
    /// data or the environment.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Tensor(TensorError::Config(_)))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
