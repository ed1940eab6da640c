use thiserror::Error;

/// Errors raised by grid construction, field algebra, operators and solvers.
#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("invalid grid specification: {0}")]
    InvalidGrid(String),

    #[error("axis {axis} out of range for a {n}-dimensional grid")]
    AxisOutOfRange { axis: usize, n: usize },

    #[error("band {band} exceeds the anti-aliasing limit {max} (points_per_axis / 4)")]
    BandTooLarge { band: usize, max: usize },

    #[error("field has {found} samples, grid expects {expected}")]
    GridMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("metric is singular at grid point {point:?}")]
    SingularMetric { point: Vec<usize> },

    #[error("metric is not positive definite at grid point {point:?} (smallest eigenvalue {min_eigenvalue:e})")]
    NotElliptic { point: Vec<usize>, min_eigenvalue: f64 },

    #[error("krylov solver did not converge after {iterations} iterations (relative residual {relative_residual:e})")]
    KrylovNonConvergence {
        iterations: usize,
        relative_residual: f64,
        history: Vec<f64>,
    },

    #[error("newton iteration stalled at residual {residual:e}; a KID kernel or cokernel obstruction is likely")]
    Stalled { residual: f64, history: Vec<f64> },

    #[error("metric lost ellipticity at newton iteration {iteration} after {halvings} step halvings")]
    EllipticityLost { iteration: usize, halvings: usize },

    #[error("eigensolver did not converge: {0}")]
    EigensolverNonConvergence(String),

    #[error("{unknowns} unknowns exceed the dense assembly budget of {budget}; use the matrix-free path")]
    MemoryBudget { unknowns: usize, budget: usize },

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ForgeError>;
