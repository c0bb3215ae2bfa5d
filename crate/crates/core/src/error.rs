use thiserror::Error;

use crate::mdp::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(ValidationReport),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A generator or config parameter violates a stated constraint.
    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("instance generation infeasible after {attempts} attempts: {reason}")]
    Infeasible { attempts: usize, reason: String },

    #[error("enumeration budget exceeded: {needed} policies > {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },

    #[error("stale estimates: value iteration for episode {requested} but estimates cover {completed} episodes")]
    StaleEstimates { requested: u64, completed: u64 },

    #[error("trajectory for player {player} episode {episode} already ingested (watermark {watermark})")]
    DoubleIngest {
        player: usize,
        episode: u64,
        watermark: u64,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
