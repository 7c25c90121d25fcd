//! Error type shared by all solver and study modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid system description (unknown kind, bad dimension, bad sign).
    #[error("invalid system configuration: {0}")]
    Config(String),

    /// A standing hypothesis fails hard enough that no solver may run.
    #[error("hypothesis violation: {0}")]
    Hypothesis(String),

    /// The contraction precondition is not met for the requested scale.
    #[error("contraction gate: rho = {rho:.6} >= {limit} at eps = {eps}")]
    ContractionGate { rho: f64, limit: f64, eps: f64 },

    /// Fixed-point iteration exhausted its budget.
    #[error("fixed point did not converge: residual {residual:.3e} after {iterations} iterations (tol {tol:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    /// Residual ratios stayed at or above one; the map is not contracting
    /// on the visited set.
    #[error("fixed-point iteration diverges: residual ratio {ratio:.3} persistently >= 1 after {iterations} iterations")]
    Divergence { iterations: usize, ratio: f64 },

    /// A trajectory left the configured finite box.
    #[error("state overflow at t = {t}: |value| = {value:.3e} exceeds bound {bound:.3e}")]
    Overflow { t: f64, value: f64, bound: f64 },

    /// Two grids that must be compatible are not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A time or shift falls outside the sampled support of a path.
    #[error("time {t} outside path support [{t_min}, {t_max}]")]
    OutsideSupport { t: f64, t_min: f64, t_max: f64 },

    /// Generic invalid argument for an operation.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Too many replicas of a Monte-Carlo study failed.
    #[error("replica failure quorum exceeded: {failed} of {total} replicas failed ({first})")]
    ReplicaQuorum {
        failed: usize,
        total: usize,
        first: String,
    },
}
