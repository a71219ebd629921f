use thiserror::Error;

/// Errors raised by simulation kernels and the scenario harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("search space of {hypotheses} hypotheses exceeds the guard of {guard}")]
    GuardExceeded { hypotheses: u128, guard: u128 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error("scenario `{scenario}`: {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by bad configuration or input rather than by
    /// the environment (I/O) or a failure during a run.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse(_) | Error::Validation(_) => true,
            Error::Scenario { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
