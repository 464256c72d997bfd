use thiserror::Error;

use crate::fixed::FixedError;

pub type Result<T, E = SorError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SorError {
    #[error("mesh must have at least one interior point per dimension")]
    EmptyMesh,

    #[error("malformed sparse matrix: {0}")]
    Malformed(String),

    #[error("row {row}: diagonal entry is zero or missing")]
    ZeroDiagonal { row: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite iterate at component {index}")]
    NonFinite { index: usize },

    #[error("non-finite value at interior cell ({row}, {col})")]
    NonFiniteCell { row: usize, col: usize },

    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),

    #[error("dense analysis is limited to dimension {max}, got {dim}")]
    TooLarge { dim: usize, max: usize },

    #[error("eigenvalue iteration did not converge")]
    EigenNoConvergence,

    #[error("exact solution is inconsistent with the problem data: {0}")]
    InconsistentExact(String),

    #[error("red-black ordering is only available on the stencil solver")]
    UnsupportedOrdering,

    #[error("fixed-point arithmetic failed at interior cell ({row}, {col}): {source}")]
    FixedCell {
        row: usize,
        col: usize,
        #[source]
        source: FixedError,
    },

    #[error(transparent)]
    Fixed(#[from] FixedError),
}
