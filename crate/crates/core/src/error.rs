use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("eigen solver did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("det-adjoint singular")]
    DetAdjointSingular,

    #[error("gram singular: reinitialize or perturb W")]
    GramSingular,

    #[error("degenerate batch: need at least 2 samples, got {0}")]
    DegenerateBatch(usize),

    #[error("loss node must be 1x1, got {0:?}")]
    NonScalarLoss((usize, usize)),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("diverged: non-finite gradient for parameter {0}")]
    Diverged(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic: observed bytes {observed:02x?}")]
    BadMagic { observed: [u8; 4] },

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("invalid config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Process exit status for the command line tool: 2 for rejected
    /// inputs, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotSymmetric(_)
            | Error::NotPositiveDefinite
            | Error::NoConvergence { .. }
            | Error::DetAdjointSingular
            | Error::GramSingular
            | Error::NonFinite(_)
            | Error::Diverged(_) => 3,
            _ => 2,
        }
    }
}
