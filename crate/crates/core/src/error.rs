use thiserror::Error;

use crate::state_space::TrialState;

/// Errors raised by the exact engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("stage {stage} is outside 0..={max}")]
    StageOutOfRange { stage: usize, max: usize },

    #[error("state {state:?} does not belong to stage {stage}")]
    StateMismatch { state: TrialState, stage: usize },

    #[error("quadrature did not converge: value {value}, error estimate {error} after {segments} segments")]
    Quadrature { value: f64, error: f64, segments: usize },

    #[error("prior parameters must be integers for the finite-sum evaluation")]
    NonIntegerPrior,

    #[error("coefficient overflow at state {state:?}")]
    Overflow { state: TrialState },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("allocation rule queried at burn-in stage {stage} (burn-in ends at {burn_in_end})")]
    BurnInQuery { stage: usize, burn_in_end: usize },

    #[error("PIWD is undefined when both arms have the same success probability")]
    UndefinedAtNull,

    #[error("cache file is corrupt: {0}")]
    CorruptCache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
