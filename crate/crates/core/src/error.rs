//! Error type shared by every module of the crate.

use thiserror::Error;

/// Everything that can go wrong while building projections or running tests.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("control matrix W is rank deficient (numerical rank {rank} < {columns} columns)")]
    RankDeficientControls { rank: usize, columns: usize },

    #[error("instrument matrix is identically zero")]
    ZeroMatrix,

    #[error("ridge penalty must be non-negative, got {0}")]
    NegativeTheta(f64),

    #[error("no regularizer in [0, {theta_bar}] satisfies the leverage constraints")]
    DegenerateInstruments { theta_bar: f64 },

    #[error("off-diagonal projection mass K_theta is zero")]
    ZeroKLambda,

    #[error("Z'Z is singular (rank {rank}, {columns} instruments, {n} observations)")]
    SingularGram { rank: usize, columns: usize, n: usize },

    #[error("heteroskedasticity-robust score covariance is singular")]
    SingularOmega,

    #[error("every instrument column has a zero studentization denominator")]
    DegenerateColumn,

    #[error("residual sum of squares outside the ridge projection is zero")]
    DegenerateDenominator,

    #[error("instrument column {0} has zero sum of squares")]
    ZeroColumn(usize),

    #[error("invalid sparsity pattern: {0}")]
    InvalidSparsity(String),

    #[error("the Hausman design is only defined for K = 1 or K >= 10, got K = {0}")]
    UnsupportedK(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("column `{0}` not found in input")]
    MissingColumn(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    ParseError {
        row: usize,
        column: String,
        message: String,
    },

    #[error("non-finite value at row {row}, column `{column}`")]
    NonFinite { row: usize, column: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable identifier, used in error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::RankDeficientControls { .. } => "rank_deficient_controls",
            Error::ZeroMatrix => "zero_matrix",
            Error::NegativeTheta(_) => "negative_theta",
            Error::DegenerateInstruments { .. } => "degenerate_instruments",
            Error::ZeroKLambda => "zero_k_lambda",
            Error::SingularGram { .. } => "singular_gram",
            Error::SingularOmega => "singular_omega",
            Error::DegenerateColumn => "degenerate_column",
            Error::DegenerateDenominator => "degenerate_denominator",
            Error::ZeroColumn(_) => "zero_column",
            Error::InvalidSparsity(_) => "invalid_sparsity",
            Error::UnsupportedK(_) => "unsupported_k",
            Error::InvalidConfig(_) => "invalid_config",
            Error::MissingColumn(_) => "missing_column",
            Error::ParseError { .. } => "parse_error",
            Error::NonFinite { .. } => "non_finite",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
