use crate::mdp::Violation;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not agree with the declared dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The model is well-shaped but breaks one or more linear-MDP invariants.
    #[error("invalid linear MDP ({} violation(s)); first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Invalid(Vec<Violation>),

    #[error("invalid policy: {0}")]
    Policy(String),

    #[error("generator cannot build instance: {0}")]
    Generation(String),

    #[error("permissible actions leave the target support at stage {stage}, state {state}, action {action}")]
    SupportMismatch { stage: usize, state: usize, action: usize },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("refusing white-box attack: certificate verdict is {verdict} (epsilon* = {epsilon_star:.3e})")]
    NotAttackable { verdict: String, epsilon_star: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
