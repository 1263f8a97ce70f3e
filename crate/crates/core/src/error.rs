//! Error types shared across the toolkit.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Everything that can go wrong in the numerical toolkit.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// An iterative solver (eigen, exp, ...) failed to produce a finite result.
    /// Carries the offending matrix for post-mortem inspection.
    #[error("numerical failure in {context} on a {dim}x{dim} matrix")]
    NumericalFailure {
        context: &'static str,
        dim: usize,
        matrix: DMatrix<Complex64>,
    },

    /// A matrix expected to be positive semidefinite has a significantly
    /// negative eigenvalue.
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },

    /// A state could not be normalized because its trace is (numerically) zero.
    #[error("degenerate state: trace {trace:.3e} is too small to normalize")]
    DegenerateState { trace: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The measurement model is malformed (non-Hermitian Hamiltonian,
    /// inconsistent operator dimensions, or no noise channels at all).
    #[error("invalid model: {reason}")]
    InvalidModel { reason: String },

    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },

    /// The estimated filter cannot track the true state: ker rho_hat is not
    /// contained in ker rho. Carries the violating eigenvector of rho_hat.
    #[error("kernel inclusion violated: rho_hat has a null direction with <v|rho|v> = {overlap:.3e}")]
    KernelInclusion {
        overlap: f64,
        eigenvector: Vec<Complex64>,
    },

    /// The propagator annihilated the initial state; the step size is too
    /// large or the model is pathological.
    #[error("trajectory died at t = {time:.6}: tr(S rho S*) underflowed")]
    TrajectoryDeath { time: f64 },

    /// A per-step jump probability exceeded the configured cap.
    #[error("step size too large at t = {time:.6}: intensity {intensity:.3e} * dt exceeds cap {cap:.3e}")]
    StepSizeTooLarge { time: f64, intensity: f64, cap: f64 },

    /// Analysis requested on a model with a nontrivial decaying subspace.
    #[error("unsupported model: decaying subspace has dimension {decaying_dim}")]
    UnsupportedModel { decaying_dim: usize },

    /// The minimal supports found are not mutually orthogonal, so the
    /// enclosure decomposition is not unique.
    #[error("enclosure decomposition is not unique: {reason}")]
    DecompositionNotUnique { reason: String },

    /// The biorthogonality system for the dual projectors is singular.
    #[error("biorthogonal system is singular (condition number {condition:.3e})")]
    BiorthogonalSingular { condition: f64 },

    /// Too many trajectories failed for the ensemble statistics to be trusted.
    #[error("{failed} of {total} trajectories failed (limit is 1%): first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
