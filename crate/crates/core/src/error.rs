use thiserror::Error;

/// Errors produced by the estimation, simulation and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {what} at {index}")]
    NonFinite { what: &'static str, index: String },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("no usable pairs: series length {len} with horizon {horizon}")]
    NoUsablePairs { len: usize, horizon: usize },

    #[error("insufficient data: need {needed}, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("singular system in {context} (condition estimate {condition:.3e})")]
    Singular { context: String, condition: f64 },

    #[error("eigendecomposition did not converge (residual {residual:.3e})")]
    EigenNoConvergence { residual: f64 },

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: String, iterations: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("screening removed every {axis} at threshold {threshold}; lower the threshold")]
    AllRemoved { axis: &'static str, threshold: f64 },

    #[error("estimate matches the target exactly; log loss is undefined")]
    ExactMatch,

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable snake_case tag, used for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::NonFinite { .. } => "non_finite",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NoUsablePairs { .. } => "no_usable_pairs",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::Singular { .. } => "singular",
            Error::EigenNoConvergence { .. } => "eigen_no_convergence",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Degenerate(_) => "degenerate",
            Error::ZeroVariance(_) => "zero_variance",
            Error::AllRemoved { .. } => "all_removed",
            Error::ExactMatch => "exact_match",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
