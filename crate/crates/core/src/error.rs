use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("group {group} is empty")]
    EmptyGroup { group: usize },

    #[error("observation {index} of group {group} is not finite")]
    NonFinite { group: usize, index: usize },

    #[error("invalid parameter `{field}` = {value}")]
    InvalidParam { field: &'static str, value: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:e})")]
    MaxIterExceeded { iterations: usize, residual: f64 },

    #[error("rejection sampler exceeded its budget of {proposals} proposals")]
    BudgetExceeded { proposals: u64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("no solution in [{lo:e}, {hi:e}]: residuals {f_lo:e} and {f_hi:e} share a sign")]
    NoSolution { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("operation requires the gamma hyperprior on the concentration")]
    ModeError,

    #[error("degenerate chain: {0}")]
    DegenerateChain(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
