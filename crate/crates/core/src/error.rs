use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("data integrity error at row {row}, column {column}: value {value} is not a valid RSSI reading")]
    DataIntegrity { row: usize, column: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate weights: {0} detections but all weights are zero")]
    DegenerateWeights(usize),

    #[error("training diverged at epoch {epoch} (learning rate {learning_rate})")]
    Divergence { epoch: usize, learning_rate: f64 },

    #[error("partition violation: label at row {row} lies in neither side of split '{split}'")]
    PartitionViolation { row: usize, split: String },

    #[error("split '{0}' cannot be scored: empty validation subsample")]
    Evaluation(String),

    #[error("leaf fit error: empty training subsample for region {0}")]
    LeafFit(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The pipeline stage an error was raised in, if recorded.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    /// Whether the error stems from bad input or configuration rather than a
    /// failure inside the computation.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Schema(_)
            | Error::Parse { .. }
            | Error::DataIntegrity { .. }
            | Error::InvalidArgument(_)
            | Error::DimensionMismatch { .. } => true,
            Error::Stage { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
