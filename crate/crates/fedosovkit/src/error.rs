use thiserror::Error;

/// Crate-wide error type.
///
/// Domain errors carry a rendering of the offending subtree or value so that
/// CLI users see *what* failed, not just that something did.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unknown variable index {index} (chart dimension {dim}) in `{context}`")]
    UnknownVariable {
        index: usize,
        dim: usize,
        context: String,
    },

    #[error("opaque symbol `{name}` has no registered derivative")]
    OpaqueNotDifferentiable { name: String },

    #[error("evaluation failed on subtree `{subtree}`: {message}")]
    Eval { subtree: String, message: String },

    #[error("dimension mismatch: {message}")]
    DimensionMismatch { message: String },

    #[error("operation requires a form of degree {expected}, got degree {got}")]
    FormDegree { expected: usize, got: usize },

    #[error("negative power of hbar produced in `{context}`; the connection commutator must carry hbar^1 or higher")]
    NegativeHbarPower { context: String },

    #[error("connection is not flat: {message}")]
    NotFlat { message: String },

    #[error("grid mismatch: {message}")]
    GridMismatch { message: String },

    #[error("domain error: {message}")]
    Domain { message: String },

    #[error("numeric check failed: {message}")]
    NumericCheck { message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(message: impl Into<String>) -> Self {
        Error::Domain {
            message: message.into(),
        }
    }

    pub fn eval(subtree: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Eval {
            subtree: subtree.into(),
            message: message.into(),
        }
    }

    pub fn numeric_check(message: impl Into<String>) -> Self {
        Error::NumericCheck {
            message: message.into(),
        }
    }
}
