use thiserror::Error;

/// Errors surfaced by mechanism construction, distribution evaluation, and
/// the accountant.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("input {x} outside domain [{lo}, {hi}]")]
    DomainError { x: f64, lo: f64, hi: f64 },

    #[error("index {index} out of range for support size {support}")]
    IndexOutOfRange { index: usize, support: usize },

    #[error("brute-force enumeration requires m <= {max}, got m = {m}")]
    CapacityExceeded { m: usize, max: usize },

    #[error("internal consistency failure: {0}")]
    InternalConsistency(String),

    #[error("support mismatch: {left} vs {right}")]
    SupportMismatch { left: usize, right: usize },

    #[error("simulation aborted at round {round}, device {device}: {reason}")]
    SimulationAbort {
        round: usize,
        device: usize,
        reason: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
