use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the scaling-law toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("arithmetic range exceeded while computing {0}")]
    Range(&'static str),

    #[error("no feasible config: {0}")]
    NoFeasibleConfig(String),

    #[error("{path}: row {row}, column `{column}`: {message}")]
    Load {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("singular transform: sparsity {0} must be < 1")]
    SingularTransform(f64),

    #[error("singular fit: feature `{0}` is collinear or constant")]
    SingularFit(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient variation: {0}")]
    InsufficientVariation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error(transparent)]
    Optimizer(#[from] crate::optim::OptimError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
