use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry encountered in {0}")]
    NonFinite(&'static str),

    #[error("negative rate {rate} on jump term {index}")]
    NegativeRate { index: usize, rate: f64 },

    #[error("classical label {label} out of range (n_classical = {n_classical})")]
    LabelOutOfRange { label: usize, n_classical: usize },

    #[error("state cannot emit: jump probability {0:e} vanishes")]
    NullJump(f64),

    #[error("survival probability {0:e} below extinction threshold")]
    Extinct(f64),

    #[error("all smoothed weights vanish")]
    InfeasibleFuture,

    #[error("classical label {label} carries weight {weight:e} but its filtered block vanishes")]
    InconsistentWeight { label: usize, weight: f64 },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
