use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("an arbiter PUF needs at least one stage")]
    ZeroStages,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("XOR group is empty")]
    EmptyGroup,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("noise calibration did not converge: sigma {sigma} gives flip rate {flip_rate}")]
    CalibrationFailed { sigma: f64, flip_rate: f64 },

    #[error("only {found} of {requested} requested challenges are reliable")]
    InsufficientReliable { found: usize, requested: usize },

    #[error("{patterns} pairwise distinct value strings cannot be built from {bits} bits")]
    TooManyPatterns { patterns: usize, bits: usize },

    #[error("pattern design reached mean pairwise FHD {best}, below the required {required}")]
    DesignBelowTarget { best: f64, required: f64 },

    #[error("no authentication session is open on the device")]
    NoSession,

    #[error("estimators are degenerate: p_intra {p_intra} must be below p_inter {p_inter}")]
    DegenerateEstimators { p_inter: f64, p_intra: f64 },

    #[error("EER target {target} not reached with up to {max_rounds} rounds")]
    UnreachableTarget { target: f64, max_rounds: usize },

    #[error("learned model reached {accuracy} held-out accuracy, below the required {required}")]
    EnrollmentFailed { accuracy: f64, required: f64 },

    #[error("reliable challenge pool exhausted: {available} left, {needed} needed")]
    PoolExhausted { available: usize, needed: usize },

    #[error("no fresh partial challenge found after {attempts} draws")]
    ChallengeSpaceExhausted { attempts: usize },

    #[error("malformed frame at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: &'static str },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual })
    }
}
