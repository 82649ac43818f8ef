use thiserror::Error;

/// Errors surfaced by the allocation library and the experiment harness.
#[derive(Debug, Error)]
pub enum OsarError {
    #[error("source {source_index}: observation {value} lies outside the family support")]
    RejectedInput { source_index: usize, value: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate instance: {0}")]
    Degenerate(String),

    #[error("infeasible allocation program: epsilon * (B + L) = {0} >= 1")]
    Infeasible(f64),

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("macrorun with seed {seed} failed: {message}")]
    RunFailed { seed: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, OsarError>;
