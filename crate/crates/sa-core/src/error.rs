use thiserror::Error;

/// Errors surfaced by schedules, solvers, and the experiment driver.
#[derive(Debug, Error)]
pub enum SaError {
    #[error("nonpositive scale: gamma1 = {0} must be > 0")]
    NonpositiveScale(f64),

    #[error("square-summability violated: gamma = {0} must be > 1/2")]
    SquareSummability(f64),

    #[error("summability violated: gamma = {0} must be <= 1")]
    Summability(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no sign change after bracket expansion (best residual {residual:e})")]
    BracketFailure { residual: f64 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("stability condition violated")]
    StabilityViolated,

    #[error("matrices do not commute (max deviation {0:e})")]
    NonCommuting(f64),

    #[error("direction vector is not unit norm: |u| = {0}")]
    NonUnitDirection(f64),

    #[error("oracle does not expose the exact regression function required by this mode")]
    MissingExactH,

    #[error("oracle does not expose a factorized draw required by implicit_lambda mode")]
    MissingFactorization,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown experiment name: {0}")]
    UnknownExperiment(String),

    #[error("malformed config file {path} at line {line}, column {column}: {message}")]
    MalformedConfig {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
