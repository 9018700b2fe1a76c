use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty signal")]
    EmptySignal,

    #[error("invalid band [{lo_hz}, {hi_hz}] Hz")]
    InvalidBand { lo_hz: f64, hi_hz: f64 },

    #[error("non-causal delay ({0} s)")]
    NonCausalDelay(f64),

    #[error("delay of {delay_samples:.3} samples exceeds signal length {len}")]
    DelayTooLong { delay_samples: f64, len: usize },

    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(f64, f64),

    #[error("length mismatch: {0} vs {1} samples")]
    LengthMismatch(usize, usize),

    #[error("weight count {got} does not match {expected} canceller taps")]
    WeightCount { expected: usize, got: usize },

    #[error("ill-conditioned normal equations (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("LMS diverged (reduce mu)")]
    Diverged,

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
