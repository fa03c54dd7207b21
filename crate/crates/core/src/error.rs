//! Shared error type for the toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e} exceeds tolerance {tol:.3e})")]
    NotSymmetric { asymmetry: f64, tol: f64 },
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NotPsd { min_eig: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance is numerically singular (min eigenvalue {min_eig:.3e})")]
    SingularCovariance { min_eig: f64 },
    #[error("reference covariance is not strictly positive definite")]
    SingularReference,
    #[error("mass must be positive, got {mass:.3e}")]
    NonPositiveMass { mass: f64 },
    #[error("stationarity system is singular")]
    SingularSystem,
    #[error("state covariance is singular at step {step}")]
    SingularStateCov { step: usize },
    #[error("Schur complement has negative eigenvalue {min_eig:.3e} at step {step}")]
    NegativeSchurComplement { step: usize, min_eig: f64 },
    #[error("dynamics admit no positive-definite covariance trajectory: {reason}")]
    InfeasibleDynamics { reason: String },
    #[error("q has zero weight where p is positive (grid index {index})")]
    SupportViolation { index: usize },
    #[error("grid window covers only {coverage:.2} standard deviations (need at least 4)")]
    DomainTooNarrow { coverage: f64 },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}
