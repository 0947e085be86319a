use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid action {action}: {reason}")]
    InvalidAction { action: String, reason: String },

    #[error("request {request_id} is unschedulable: no node can ever host it")]
    Unschedulable { request_id: u64 },

    #[error("request {request_id} is infeasible at arrival (strict-paper mode forbids deferral)")]
    InfeasibleStrict { request_id: u64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("all actions are masked")]
    AllMasked,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("version mismatch: {what}: checkpoint has {found}, expected {expected}")]
    VersionMismatch {
        what: String,
        found: String,
        expected: String,
    },

    #[error("brute force needs {needed} evaluations, budget is {budget}; reduce the instance")]
    BudgetExceeded { needed: f64, budget: u64 },

    #[error("environment not reset or episode finished")]
    EpisodeOver,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors caused by bad input data rather than a runtime failure.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::InvalidScenario(_)
                | Error::Checkpoint(_)
                | Error::VersionMismatch { .. }
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
