use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch in {context}: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        context: &'static str,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("mixture has no components")]
    EmptyMixture,

    #[error("component {index}: {reason}")]
    InvalidComponent { index: usize, reason: String },

    #[error("mixture weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },

    #[error("output covariance of component pair (k={k}, l={l}) is not positive definite")]
    OutputCovariance { k: usize, l: usize },

    #[error("overall output covariance is singular")]
    SingularCovariance,

    #[error("noise component index {index} out of range for {count} components")]
    ComponentIndex { index: usize, count: usize },

    #[error("cannot project the zero matrix onto a power sphere")]
    ZeroProjection,

    #[error("initial point is infeasible (constraint residual {residual:e})")]
    Infeasible { residual: f64 },

    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix text, line {line}: {reason}")]
    MatrixParse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
