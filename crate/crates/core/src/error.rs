use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("arity mismatch for `{name}` at byte {offset}: expected {expected} argument(s), found {found}")]
    Arity {
        name: String,
        offset: usize,
        expected: usize,
        found: usize,
    },

    #[error("variable x{index} exceeds model dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize },

    #[error("expression is not differentiable at this point ({0})")]
    NonSmooth(&'static str),

    #[error("non-finite value: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("integration diverged on interval {interval}")]
    Diverged { interval: usize },

    #[error("no convergence after {iterations} iterations (best residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("line search failed at iteration {iteration}: {message}")]
    LineSearch { iteration: usize, message: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("no candidate source points within radius {radius} (grid spacing {spacing}); refine the grid or enlarge the radius")]
    EmptyCandidates { radius: f64, spacing: f64 },

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
