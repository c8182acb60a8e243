use thiserror::Error;

/// Errors raised across the crate.
///
/// Each variant belongs to one of the CLI exit-code classes, see [`Error::class`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment: {0}")]
    InvalidCmdp(String),
    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("value iteration did not converge within {iterations} iterations (residual {residual:e}, tol {tol:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
    },
    #[error("singular linear system ({0})")]
    Singular(&'static str),
    #[error("support violation: p={p:e} > 0 where q=0 at index {index}")]
    SupportViolation { index: usize, p: f64 },
    #[error("zero-probability concept {concept} in shared support (context {context})")]
    ZeroProbabilityConcept { concept: usize, context: usize },
    #[error("instance too large: {0}")]
    TooLarge(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("non-finite gradient at iteration {0}")]
    NonFiniteGradient(usize),
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Convergence,
    Capability,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonConvergence { .. } | Error::Singular(_) | Error::NonFiniteGradient(_) => {
                ErrorClass::Convergence
            }
            Error::TooLarge(_) | Error::Unsupported(_) => ErrorClass::Capability,
            _ => ErrorClass::Input,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
