use thiserror::Error;

/// Errors produced by the identification library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("grid too small: {got} interior nodes, need at least {min}")]
    GridTooSmall { got: usize, min: usize },

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("non-finite value at index {index} ({context})")]
    NonFinite { index: usize, context: String },

    #[error("integration diverged at step {step} (t = {time:.6e} s); try a smaller step size")]
    Divergence { step: usize, time: f64 },

    #[error("stable step estimation failed: {0}")]
    Estimation(String),

    #[error("stale tape: {0}")]
    StaleTape(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unsupported primitive: {0}")]
    Unsupported(String),

    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Whether the error stems from numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::Divergence { .. }
                | Error::Estimation(_)
                | Error::TrainingAborted(_)
        )
    }
}
