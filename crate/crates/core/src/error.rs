use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("plan invariant violated: {0}")]
    PlanInconsistent(String),

    #[error("{what} = {value} outside domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("refusing plan: {steps} steps per block exceeds cap {cap}")]
    MemoryCap { steps: usize, cap: usize },

    #[error("non-finite state in block {block} at node {node} (iteration {iteration})")]
    NonFinite {
        block: usize,
        node: usize,
        iteration: usize,
    },

    #[error(
        "Picard iteration diverged in block {block} at iteration {iteration}: residual {residual:e} vs initial {initial:e} (L_s^2 h e^(2h) = {contraction})"
    )]
    Divergence {
        block: usize,
        iteration: usize,
        residual: f64,
        initial: f64,
        contraction: String,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("singular covariance: {0}")]
    Singular(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
