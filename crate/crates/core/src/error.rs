use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParam { key: String, reason: String },

    #[error("field has {got} sites but the lattice has {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite field value at t = {time}")]
    NonFinite { time: f64 },

    #[error("stability matrix of dimension {dim} exceeds the dense cap {cap}")]
    TooLarge { dim: usize, cap: usize },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("outside analyzed regime: {0}")]
    OutsideRegime(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("singular time slice: |d/dt w| = {value:e} below floor {floor:e} at site {site}")]
    SingularSlice { site: usize, value: f64, floor: f64 },

    #[error("periodic background not closed: relative mismatch {mismatch:e} > {tolerance:e}")]
    NotClosed { mismatch: f64, tolerance: f64 },

    #[error("time-translation mode has zero norm (static background)")]
    ZeroMode,

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(key: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    /// Whether the failure is a numerical breakdown (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::Eigen(_)
                | Error::SingularSlice { .. }
                | Error::NotClosed { .. }
                | Error::ZeroMode
                | Error::InsufficientData(_)
                | Error::OutsideRegime(_)
        )
    }
}
