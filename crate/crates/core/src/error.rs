use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("guard violation: event {event} cannot fire in state {state}")]
    GuardViolation { event: usize, state: String },

    #[error("inconsistent state update: {0}")]
    InconsistentUpdate(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("state space too large: {states} joint states (limit {limit})")]
    StateSpaceTooLarge { states: usize, limit: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("rank deficient design: dependent columns {0:?}")]
    RankDeficient(Vec<String>),

    #[error("models are not nested: {0}")]
    NotNested(String),

    #[error("undefined test: {0}")]
    UndefinedTest(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
