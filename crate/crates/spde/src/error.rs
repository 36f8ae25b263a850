//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A stencil set violates its structural requirements.
    #[error("invalid stencil: {0}")]
    InvalidStencil(String),

    /// A scalar argument is outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),

    /// A point expected in a finer (or enclosing) grid is missing.
    #[error("grid nesting violation: point {point:?} not present in target grid")]
    NestingViolation { point: Vec<i64> },

    /// Field/grid/trajectory shapes do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The symbol 2a - sigma sigma^T (or its discrete analogue) has a
    /// negative eigenvalue beyond tolerance.
    #[error("not parabolic at t={t}, x={x:?}: min eigenvalue {eigenvalue:.3e}")]
    NotParabolic {
        t: f64,
        x: Vec<f64>,
        eigenvalue: f64,
    },

    /// A linear solve failed to reach the residual tolerance.
    #[error(
        "linear solve did not converge after {iterations} iterations (residual {residual:.3e})"
    )]
    LinearSolve { iterations: usize, residual: f64 },

    /// An implicit Euler step produced a non-finite field or an
    /// unconverged solve; usually means tau is not small enough.
    #[error("time step {step} failed (residual {residual:.3e}); tau may be too large")]
    StepFailure { step: usize, residual: f64 },

    /// Pathwise flow inversion could not bracket or resolve the preimage.
    #[error("flow inversion failed: {0}")]
    Inversion(String),

    /// A simulated characteristic left the finite range of f64.
    #[error("characteristic blow-up at step {step}")]
    BlowUp { step: usize },

    /// Configuration file or CLI parameter error.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
