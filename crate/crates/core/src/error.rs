use std::path::PathBuf;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("step index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("class label {label} out of range (model has {classes} classes)")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("invalid timestep grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value produced at reverse step t={step}")]
    NumericFailure { step: usize },

    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("config error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("kind mismatch: {a} vs {b}")]
    KindMismatch { a: String, b: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("malformed input: {0}")]
    Parse(String),

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

    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by arithmetic blowing up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericFailure { .. } | Error::Divergence { .. }
        )
    }

    /// True for errors caused by configuration or malformed inputs.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidRange(_)
                | Error::IndexOutOfRange { .. }
                | Error::LabelOutOfRange { .. }
                | Error::DimMismatch { .. }
                | Error::InsufficientSamples { .. }
                | Error::InvalidGrid(_)
                | Error::Schema { .. }
                | Error::KindMismatch { .. }
                | Error::Checkpoint(_)
                | Error::Parse(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
