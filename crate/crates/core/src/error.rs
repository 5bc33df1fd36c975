use thiserror::Error;

/// Errors surfaced by the trust pipeline and the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NexusError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("insufficient evaluators: need {needed}, have {available}")]
    InsufficientEvaluators { needed: usize, available: usize },

    #[error("insufficient candidates: need {needed}, have {available}")]
    InsufficientCandidates { needed: usize, available: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no trusted mass: all aggregation weights are zero")]
    NoTrustedMass,

    #[error("non-finite gradient at local step {step}")]
    NonFiniteGradient { step: usize },

    #[error("empty eligible voter set")]
    EmptyEligibleSet,

    #[error("epoch is terminal ({0})")]
    TerminalEpoch(&'static str),

    #[error("voter {0} is not part of the epoch snapshot")]
    UnknownVoter(usize),

    #[error("voter {0} already voted in this epoch")]
    DuplicateVote(usize),

    #[error("unknown operation class: {0}")]
    UnknownOpClass(String),

    #[error("unknown experiment: {0}")]
    UnknownExperiment(String),

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl NexusError {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        NexusError::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for NexusError {
    fn from(err: std::io::Error) -> Self {
        NexusError::Io(err.to_string())
    }
}

impl From<csv::Error> for NexusError {
    fn from(err: csv::Error) -> Self {
        NexusError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, NexusError>;
