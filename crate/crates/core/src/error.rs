use thiserror::Error;

/// Errors produced while building grids/plans or running simulations.
#[derive(Debug, Error)]
pub enum SimError {
    /// Invalid lattice geometry (size, length, mode).
    #[error("invalid grid: {0}")]
    Grid(String),
    /// Invalid run plan (parameter ranges, incompatible settings).
    #[error("invalid plan: {0}")]
    Plan(String),
    /// A buffer had the wrong number of lattice points.
    #[error("shape mismatch: expected {expected} points, got {got}")]
    Shape { expected: usize, got: usize },
    /// A field stopped being finite during integration.
    #[error("non-finite field value in trajectory {trajectory} at t = {t}")]
    NonFinite { trajectory: u64, t: f64 },
    /// Too large a fraction of the ensemble aborted.
    #[error("{aborted} of {total} trajectories aborted (limit {limit})")]
    TooManyAborts {
        aborted: usize,
        total: usize,
        limit: usize,
    },
    /// Eigendecomposition failed to converge.
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
    /// Statistics were requested from an ensemble holding no trajectories.
    #[error("no trajectories accumulated")]
    EmptyEnsemble,
}
