use num_complex::Complex64;
use thiserror::Error;

/// Errors raised by identification, control synthesis and the experiment runner.
#[derive(Debug, Error)]
pub enum KronicError {
    #[error("integration diverged at t = {t}: state {state:?}")]
    IntegrationDiverged { t: f64, state: Vec<f64> },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unsupported sampling: {0}")]
    UnsupportedSampling(String),

    #[error("degenerate parameter: {0}")]
    DegenerateParameter(String),

    #[error("point ({x}, {y}) lies outside the domain [0,2]x[0,1]")]
    OutOfDomain { x: f64, y: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error(
        "no eigenfunction at lambda = {lambda}: smallest singular value {sigma_min:e} exceeds threshold {threshold:e}"
    )]
    NoEigenfunction {
        lambda: Complex64,
        sigma_min: f64,
        threshold: f64,
    },

    #[error("sparsification failed: support collapsed to the empty set")]
    SparsificationFailed,

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("pair (A, B) is not stabilizable: uncontrollable eigenvalue {eigenvalue}")]
    Unstabilizable { eigenvalue: Complex64 },

    #[error("pair (A, Q) is not detectable: unobservable eigenvalue {eigenvalue}")]
    Undetectable { eigenvalue: Complex64 },

    #[error("Riccati solution residual {residual:e} above tolerance {tolerance:e}")]
    RiccatiConvergence { residual: f64, tolerance: f64 },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("trajectory has no recorded inputs")]
    MissingInputs,

    #[error("feedback linearization is singular for this input map: {0}")]
    SingularFeedbackLinearization(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown configuration key `{key}`; valid keys: {}", valid.join(", "))]
    UnknownKey { key: String, valid: Vec<String> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, KronicError>;
