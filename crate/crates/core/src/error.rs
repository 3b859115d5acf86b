use thiserror::Error;

/// Errors raised by model evaluation, estimation and the oracles.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent input data.
    #[error("input error: {0}")]
    Input(String),

    /// A drift or likelihood returned a non-finite value.
    #[error("evaluation error at step {step}: {message}")]
    Evaluation { step: usize, message: String },

    /// The implicit clean-state step did not converge.
    #[error("fixed-point iteration failed at step {step} (last residual {residual:e})")]
    FixedPoint { step: usize, residual: f64 },

    /// A factorization failed (matrix not positive definite or singular).
    #[error("numerical error at node {node}: {message}")]
    Numerical { node: usize, message: String },

    /// The gradient was requested where the objective is not finite.
    #[error("gradient error: {0}")]
    Gradient(String),

    /// Two paths or trajectories cover different time horizons.
    #[error("horizon mismatch: {left} vs {right}")]
    HorizonMismatch { left: f64, right: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
