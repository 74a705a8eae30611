use alloc::string::String;

/// Errors produced by the analysis core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is not positive semi-definite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("covariance has zero trace")]
    ZeroTrace,
    #[error("effective rank is undefined for an all-zero spectrum")]
    UndefinedRank,
    #[error("degenerate normalization (denominator {denominator:e})")]
    DegenerateNormalization { denominator: f64 },
    #[error("operation requires a shrunk covariance")]
    NotShrunk,
    #[error("covariance is already shrunk")]
    AlreadyShrunk,
    #[error("covariance is not normalized to unit bulk variance (sigma2 = {sigma2})")]
    NotNormalized { sigma2: f64 },
    #[error("channel weight has no filter bank attached")]
    MissingBank,
    #[error("covariance has no recorded sample count")]
    MissingSampleCount,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
