use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("matrix is not positive definite (last jitter tried: {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    #[error("numerical inconsistency: {0}")]
    Inconsistency(String),

    #[error("invalid group `{group}`: {reason}")]
    InvalidGroup { group: String, reason: String },

    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure came from the numerics rather than from the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::TrainingDiverged { .. }
                | Error::Inconsistency(_)
        )
    }

    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
