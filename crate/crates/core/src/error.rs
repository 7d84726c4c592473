use thiserror::Error;

/// Errors raised by the estimators, the cross-validation driver and the
/// simulation harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum McenError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("covariate column {0} has zero variance")]
    ZeroVarianceColumn(usize),

    #[error("need at least two observations, got {0}")]
    TooFewObservations(usize),

    #[error("cluster index {index} out of range for {clusters} clusters")]
    IndexOutOfRange { index: usize, clusters: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid tuning parameters: {0}")]
    InvalidTuning(String),

    #[error("invalid response: {0}")]
    InvalidResponse(String),

    #[error("X^T X is singular; the closed form needs n > p and full column rank")]
    SingularGram,

    #[error("invalid fold count K={k} for n={n}")]
    InvalidK { k: usize, n: usize },

    #[error("unsupported predictor count p={0}; use p = 12 or p >= 30")]
    UnsupportedP(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("coordinate descent did not converge within {sweeps} sweeps")]
    MaxSweepsExceeded { sweeps: usize },

    #[error("linear predictor exceeded the clamp for {iterations} consecutive IRLS steps (separation)")]
    SeparationDetected { iterations: usize },

    #[error("column '{0}' not found in the data header")]
    MissingColumn(String),

    #[error("missing or non-numeric value in column '{column}' at data row {row}")]
    BadValue { row: usize, column: String },

    #[error("malformed table: {0}")]
    Table(String),

    #[error("serialization failed: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, McenError>;
