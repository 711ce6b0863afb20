use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rank-deficient least-squares system for the {surface} surface")]
    RankDeficient { surface: String },

    #[error("mesh cell {index} has non-positive area {area:e}")]
    InvalidCell { index: usize, area: f64 },

    #[error("missing boundary value for face {face} on patch `{patch}`")]
    MissingBoundaryValue { patch: String, face: usize },

    #[error("solver did not converge after {iterations} iterations (last residual ratio {last:e})")]
    NotConverged {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("non-physical state in cell {cell}: rho = {rho:e}, p = {p:e}")]
    NonPhysical { cell: usize, rho: f64, p: f64 },

    #[error("matrix is not positive definite (eigenvalue {eigenvalue:e})")]
    NotPositiveDefinite { eigenvalue: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("optimization failed: {reason}")]
    Optimization {
        reason: String,
        best: Option<Vec<f64>>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
