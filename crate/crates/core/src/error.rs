use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("weights at {path} sum to {sum}, expected 1")]
    NonUnitMass { path: String, sum: f64 },

    #[error("level mismatch at {path}: {detail}")]
    LevelMismatch { path: String, detail: String },

    #[error("invalid point at {path}: {detail}")]
    InvalidPoint { path: String, detail: String },

    #[error("unbalanced marginals: rows sum to {row_sum}, columns sum to {col_sum}")]
    UnbalancedMarginals { row_sum: f64, col_sum: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("problem of size {n} exceeds the limit {max}")]
    TooLarge { n: usize, max: usize },

    #[error("base measures do not match: {0}")]
    BaseMismatch(String),

    #[error("coupling does not match the plans: {0}")]
    CouplingMismatch(String),

    #[error("plan is not optimal: norm {norm} but W2 between its marginals is {w2}")]
    NotOptimalInput { norm: f64, w2: f64 },

    #[error("manifold curvature is not supported for this operation")]
    CurvatureUnsupported,

    #[error("desk-scale budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("malformed document: {0}")]
    Schema(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
