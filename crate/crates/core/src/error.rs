use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    #[error("loss must be 1x1, got {shape:?}")]
    NonScalarLoss { shape: (usize, usize) },

    #[error("non-finite value: {context}")]
    NonFinite { context: String },

    #[error("{path}: line {line}: {field}: {message}")]
    Schema {
        path: String,
        line: usize,
        field: String,
        message: String,
    },

    #[error("example {example}: {message}")]
    Highlight { example: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short failure category and process exit code.
    pub fn category(&self) -> (&'static str, i32) {
        match self {
            Error::Config { .. } | Error::InvalidArgument(_) => ("config", 2),
            Error::Schema { .. } | Error::Highlight { .. } | Error::Json(_) | Error::Csv(_) => ("data", 3),
            Error::Io { .. } => ("io", 4),
            Error::Diverged { .. } | Error::NonFinite { .. } => ("numeric", 5),
            Error::Checkpoint(_) => ("checkpoint", 6),
            Error::Shape { .. } | Error::NonScalarLoss { .. } => ("internal", 1),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
