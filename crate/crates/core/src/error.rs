use thiserror::Error;

/// Errors raised by the measurement-design and reconstruction routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("map violates its power budget: ||S||_F^2 = {frobenius_sq} > {power}")]
    PowerExceeded { frobenius_sq: f64, power: f64 },

    #[error("covariance is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("design infeasible: {observations} observations cannot identify {unknowns} unknowns")]
    InfeasibleDesign { observations: usize, unknowns: usize },

    #[error("Gram matrix is singular (condition estimate {condition:e})")]
    SingularGram { condition: f64 },

    #[error("values must be sorted in descending order and be nonnegative")]
    UnsortedSpectrum,

    #[error("all columns of the stacked operator are zero")]
    ZeroOperator,

    #[error("reference matrix has zero Frobenius norm")]
    ZeroReference,

    #[error("subspace dimension {requested} exceeds available rank {available}")]
    RankTooLarge { requested: usize, available: usize },

    #[error("not a permutation of 0..{0}")]
    InvalidPermutation(usize),

    #[error("proximal gradient diverged: objective rose from {before} to {after} at iteration {iteration} (step size {step:e})")]
    Divergence {
        iteration: usize,
        before: f64,
        after: f64,
        step: f64,
    },

    #[error("least-squares half-step {half_step} is singular at iteration {iteration}")]
    SingularLeastSquares {
        iteration: usize,
        half_step: &'static str,
    },

    #[error("residual increased from {before} to {after} at iteration {iteration}")]
    NonMonotoneResidual {
        iteration: usize,
        before: f64,
        after: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape(rows: usize, cols: usize) -> String {
    format!("{rows}x{cols}")
}

pub(crate) fn ensure_shape(
    context: &'static str,
    actual: (usize, usize),
    expected: (usize, usize),
) -> Result<()> {
    if actual != expected {
        return Err(Error::DimensionMismatch {
            context,
            expected: shape(expected.0, expected.1),
            actual: shape(actual.0, actual.1),
        });
    }
    Ok(())
}
