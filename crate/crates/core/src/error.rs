use thiserror::Error;

/// Errors raised by the optimization library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid problem definition: {0}")]
    InvalidProblem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("model returned a non-finite output {values:?} at point {point}")]
    NonFiniteOutput { point: String, values: Vec<f64> },

    #[error("model evaluation failed at point {point}: {reason}")]
    ModelFailure { point: String, reason: String },

    #[error("surrogate calibration failed: {0}")]
    Calibration(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
