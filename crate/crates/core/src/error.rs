use thiserror::Error;

/// Errors produced by the filtering library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(&'static str),
    #[error("singular matrix: {0}")]
    Singular(&'static str),
    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("quadrature rule needs {count} points, more than the cap of {cap}")]
    TooManyPoints { count: f64, cap: usize },
    #[error("rotation angle {0} rad is too close to pi for a unique logarithm")]
    AmbiguousLog(f64),
    #[error("manifold layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("pitch {0} rad is too close to the Euler-rate singularity")]
    GimbalLock(f64),
    #[error("speed conversion denominator vanishes at steering angle {0} rad")]
    Jackknife(f64),
    #[error("landmark coincides with the vehicle position")]
    ZeroRange,
    #[error("landmark {0} is already part of the state")]
    DuplicateLandmark(u64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error("filter `{filter}` cannot run on scenario `{scenario}`")]
    Unsupported { filter: String, scenario: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
