use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("point {index} is zero and cannot be normalized")]
    ZeroPoint { index: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NonSymmetric(f64),

    #[error("matrix is identically zero")]
    ZeroMatrix,

    #[error("points do not lie in the given subspace (relative residual {0:.3e})")]
    NotInSubspace(f64),

    #[error(
        "forster iteration did not converge after {iterations} iterations \
         (dim {dim}, {points} points, best eigenvalue deviation {best_deviation:.4})"
    )]
    NonConvergence {
        iterations: usize,
        dim: usize,
        points: usize,
        best_deviation: f64,
    },

    #[error("projection onto the subspace is degenerate (norm {0:.3e})")]
    DegenerateProjection(f64),

    #[error("linear map sends the point to zero")]
    DegenerateTransform,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("input exceeds the brute-force guards: {0}")]
    GuardViolation(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error("boosting failed: {0}")]
    BoostFailure(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LabError {
    /// Numeric failures map to a distinct CLI exit code.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            LabError::NonConvergence { .. }
                | LabError::DegenerateProjection(_)
                | LabError::DegenerateTransform
                | LabError::ZeroMatrix
                | LabError::NonSymmetric(_)
                | LabError::NonFinite(_)
        )
    }
}
