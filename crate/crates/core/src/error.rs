use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside the domain of the covariance map.
    #[error("domain error: {param} = {value} ({reason})")]
    Domain {
        param: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// Cholesky factorization met a non-positive pivot.
    #[error("matrix is not positive definite: pivot {pivot} = {value:e}")]
    Factorization { pivot: usize, value: f64 },

    #[error("unit {unit}: {have} observations, need at least {need}")]
    InsufficientData {
        unit: String,
        have: usize,
        need: usize,
    },

    #[error("design matrix is rank deficient: columns {} are collinear", .columns.join(", "))]
    ReducedRank { columns: Vec<String> },

    #[error("inconsistent moments: {0}")]
    InconsistentMoments(String),

    #[error("identification precondition violated: {0}")]
    IdentificationPrecondition(String),

    #[error("invalid mixing distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("configuration error: {0}")]
    Config(String),
}
