use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NonConvergence { sweeps: usize, off_norm: f64 },

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is not symmetric: entry ({row}, {col}) differs from its transpose by {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is singular (min eigenvalue {min_eigenvalue:e})")]
    Singular { min_eigenvalue: f64 },

    #[error("Taylor order must be at least 1, got {0}")]
    InvalidOrder(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("effective rank is undefined for the all-zero matrix")]
    ZeroMatrix,

    #[error("at least two classes are required, got {0}")]
    TooFewClasses(usize),

    #[error("embedding dimension {d} is smaller than the number of vertices {k}")]
    DimensionError { d: usize, k: usize },

    #[error("basis is not partially orthogonal (max |UᵀU − I| = {residual:e})")]
    NotPartialOrthogonal { residual: f64 },

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("column {column} is not unit norm (norm {norm})")]
    NotUnitNorm { column: usize, norm: f64 },

    #[error("token steps do not share the same embedding matrix (step {0})")]
    EmbeddingMismatch(usize),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("optimization diverged at iteration {iteration}: loss is {loss}")]
    Diverged { iteration: usize, loss: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
