use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("numerical accuracy not reached: achieved {achieved:.3e}, requested {requested:.3e} ({context})")]
    NumericalAccuracy {
        achieved: f64,
        requested: f64,
        context: String,
    },

    #[error("operation not supported: {0}")]
    Unsupported(String),

    #[error("resource budget exceeded: {0}")]
    Resource(String),

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("critical point not bracketed; slopes per coupling: {slopes:?}")]
    Bracketing { slopes: Vec<(f64, f64)> },

    #[error("fit failed: {reason}; residuals {residuals:?}")]
    FitFailure { reason: String, residuals: Vec<f64> },

    #[error("undefined estimate: {0}")]
    Undefined(String),

    #[error("parse error in {source_name} at line {line}{}: {message}", key.as_ref().map(|k| format!(", key `{k}`")).unwrap_or_default())]
    Parse {
        source_name: String,
        line: usize,
        key: Option<String>,
        message: String,
    },

    #[error("checkpoint does not match the run configuration: {0}")]
    CheckpointMismatch(String),

    #[error("run interrupted: {0}")]
    Interrupted(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
