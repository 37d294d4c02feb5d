use thiserror::Error;

/// Errors produced by the evolution library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A requested value has no finite answer (e.g. conjugate data beyond
    /// the growth coefficient).
    #[error("range error: {0}")]
    Range(String),

    /// Metric tensor evaluation failed (non-SPD quadratic form, dimension
    /// mismatch).
    #[error("metric error: {0}")]
    Metric(String),

    /// A feasibility constraint was violated (e.g. power queried below the
    /// slope, chain-rule F below the slope).
    #[error("constraint error: {0}")]
    Constraint(String),

    /// The inner minimizer of a variational step failed to converge.
    #[error("step error at index {index}: residual {residual:.3e} after {iterations} iterations")]
    Step {
        index: usize,
        residual: f64,
        iterations: usize,
    },

    /// Invalid construction parameters.
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
