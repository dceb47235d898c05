use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid has {n_steps} steps; operators need at least {min}")]
    GridTooCoarse { n_steps: usize, min: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("non-finite value in {context} at mode {mode}, node {node}")]
    NonFinite {
        context: &'static str,
        mode: usize,
        node: usize,
    },

    #[error("model invariant violated: {}", .0.join("; "))]
    InvalidModel(Vec<String>),

    #[error("resource cap exceeded: {requested} values requested, cap is {cap}")]
    ResourceCap { requested: usize, cap: usize },

    #[error(
        "Cholesky factorization failed after jitter {jitter:e} (condition estimate {condition:e})"
    )]
    CholeskyFailed { jitter: f64, condition: f64 },

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("moment residual {residual:e} above tolerance {tolerance:e}; smallest ridge tried {ridge_tried:e}")]
    MomentResidual {
        residual: f64,
        tolerance: f64,
        ridge_tried: f64,
    },

    #[error("mode {mode} is uncontrollable: lambda = 0 with non-zero initial coordinate")]
    Uncontrollable { mode: usize },

    #[error("path {path} blew up at step {step} (state norm {norm:e})")]
    BlowUp { path: usize, step: usize, norm: f64 },

    #[error("noise provenance mismatch: {0}")]
    Provenance(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("config validation failed at `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
