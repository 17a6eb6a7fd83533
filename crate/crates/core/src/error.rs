use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("covariance is not positive semi-definite (min eigenvalue {min_eig:e}, tolerance {tol:e})")]
    NotPsd { min_eig: f64, tol: f64 },
    #[error("singular covariance in {context} (determinant {value:e})")]
    SingularCovariance { context: &'static str, value: f64 },
    #[error("degenerate field pair ({a}, {b}) in {context}: determinant {det:e}")]
    DegeneratePair {
        context: &'static str,
        a: usize,
        b: usize,
        det: f64,
    },
    #[error("matrix is ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{what} did not converge after {iters} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iters: usize,
        residual: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("linear algebra failure: {0}")]
    LinAlg(String),
    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("truncated payload at record {record}")]
    Truncated { record: usize },
    #[error("header/payload length mismatch: header implies {expected} bytes, file has {got}")]
    LengthMismatch { expected: u64, got: u64 },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
