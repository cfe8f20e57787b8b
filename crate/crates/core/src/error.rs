use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function (e.g. a negative distance).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid rho specification: {0}")]
    InvalidSpec(String),

    /// Quadrature, root bracketing or an iteration failed to produce a usable value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("rank-deficient data: {0}")]
    RankDeficient(String),

    #[error("unsupported dimension: expected p = {expected}, got p = {got}")]
    UnsupportedDimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Every start was discarded. `diagnostics` holds one line per start.
    #[error("estimation failed: {reason}")]
    EstimationFailed {
        reason: String,
        diagnostics: Vec<String>,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
