use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot block {block})")]
    NotPositiveDefinite { block: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid interval length {0} (must be > 0)")]
    InvalidInterval(f64),

    #[error("invalid knot grid: {0}")]
    InvalidGrid(String),

    #[error("measurement at t = {0} does not coincide with a knot")]
    MeasurementOffGrid(f64),

    #[error("query time {0} is outside the trajectory span")]
    OutOfSpan(f64),

    #[error("empty preintegration window [{0}, {1}]")]
    EmptyWindow(f64, f64),

    #[error("factor graph mismatch: {0}")]
    GraphMismatch(String),

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("objective is not finite")]
    NonFiniteObjective,

    #[error("covariance is singular")]
    SingularCovariance,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error came from a numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::NonFiniteObjective
                | Error::SingularCovariance
                | Error::DegenerateData(_)
        )
    }
}
