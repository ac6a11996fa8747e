use thiserror::Error;

/// Errors raised by the uncertainty propagation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("covariance is not symmetric (relative asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("covariance is indefinite: pivot {pivot:e} at index {index} is below -{tolerance:e}")]
    Indefinite {
        index: usize,
        pivot: f64,
        tolerance: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("|H| below magnitude floor at bins {0:?}; regularize (low-pass) before dividing")]
    MagnitudeFloor(Vec<usize>),

    #[error("zero magnitude at bin {0}")]
    ZeroMagnitude(usize),

    #[error("frequency grid mismatch: {0}")]
    GridMismatch(String),

    #[error("rank-deficient design matrix: {0}")]
    RankDeficient(String),

    #[error("filter is unstable: {0}")]
    Unstable(String),

    #[error("no physical second-order system fits the data: {0}")]
    NonPhysical(String),

    #[error("too many rejected draws: {rejected} rejected for {accepted} accepted")]
    Rejection { rejected: usize, accepted: usize },

    #[error("model failed on draw {draw}: {message}")]
    ModelFailure { draw: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
