use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the editing library and its persistence layer.
#[derive(Debug, Error)]
pub enum EditError {
    #[error("non-finite input in {0}")]
    NonFiniteInput(&'static str),

    #[error("kept dimension cap {cap} exceeds representation dimension {dim}")]
    CapExceedsDimension { cap: usize, dim: usize },

    #[error("normal matrix is numerically singular (condition estimate {condition:.3e}); increase ridge")]
    SingularSystem { condition: f64 },

    #[error("{0} did not converge to an accurate factorization")]
    NoConvergence(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty null space: preserved set spans the whole {side} space")]
    EmptyNullSpace { side: &'static str },

    #[error("desired proportion must be positive")]
    ZeroDesired,

    #[error("no dimension in [{lo}, {hi}] reaches residual {epsilon:e} (best {best:.6e})")]
    Infeasible {
        lo: usize,
        hi: usize,
        epsilon: f64,
        best: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt bundle {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },

    #[error("unsupported dtype/layout {0:?}; only f64 col-major bundles are readable")]
    DtypeUnsupported(String),
}

impl EditError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        EditError::ShapeMismatch(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EditError::IoFailure {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = EditError> = std::result::Result<T, E>;
