use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by the surface they belong to: configuration,
/// data ingestion, numerics/training, orchestration, and I/O. The CLI
/// maps these groups onto process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("estimation error: {0}")]
    Estimation(String),

    /// Zero variance of the naive effect within a fold. Callers that can
    /// fall back to a constant-effect fit catch this variant explicitly.
    #[error("degenerate regression: zero variance of the naive effect")]
    DegenerateBlp,

    #[error("embedding provider error (batch {batch}): {message}")]
    Provider { batch: usize, message: String },

    #[error("nuisance coverage error: {0}")]
    Coverage(String),

    #[error("orchestration error in fold {fold}: {message}")]
    Orchestration { fold: usize, message: String },

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
