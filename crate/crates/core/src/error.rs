use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),

    #[error("invalid space: {}", .0.join("; "))]
    InvalidSpace(Vec<String>),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("size cap exceeded: {requested} points requested, cap is {cap}")]
    SizeCap { requested: usize, cap: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("eigensolver failed to converge (worst residual {residual:e})")]
    Numeric { residual: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
