//! Error types shared across the library.

use thiserror::Error;

/// Errors raised by model evaluation, norm computation, optimization, and
/// condition checking.
#[derive(Debug, Error)]
pub enum Error {
    /// An evaluation point collided with a pole of the transfer function.
    #[error("evaluation point s = {s} hits pole lambda = {pole} of mode {mode}")]
    PoleHit {
        s: num_complex::Complex64,
        pole: num_complex::Complex64,
        mode: usize,
    },

    /// A pole has nonnegative real part somewhere on the parameter domain.
    #[error("mode {mode} is unstable: Re lambda = {re_lambda} at q = {q:?}")]
    Instability {
        mode: usize,
        re_lambda: f64,
        q: Vec<f64>,
    },

    /// A structural precondition on the model was violated.
    #[error("structure error: {0}")]
    Structure(String),

    /// Adaptive refinement failed to reach the requested tolerance.
    #[error("quadrature did not converge: estimated error {estimate} > tol {tol}")]
    NonConvergence { estimate: f64, tol: f64 },

    /// A logarithm argument left the principal-branch validity region.
    #[error("principal branch violated: Re(s - sigma) = {re} <= 0")]
    BranchDomain { re: f64 },

    /// An assembled real quantity carried a non-negligible imaginary part.
    #[error("internal consistency: |Im| = {im} exceeds bound {bound} for nominally real value")]
    ImaginaryResidue { im: f64, bound: f64 },

    /// Two independent checkers disagreed beyond tolerance.
    #[error("checker cross-disagreement: {0}")]
    CrossCheck(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
