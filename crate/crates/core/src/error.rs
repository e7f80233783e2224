use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: degenerate normalization over a width of {width}")]
    Degenerate { op: &'static str, width: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid bounding box {index} in scene {scene}: {reason}")]
    InvalidBox {
        scene: String,
        index: usize,
        reason: String,
    },

    #[error("token id {token} at position {position} is outside a vocabulary of {vocab_size}")]
    TokenOutOfRange {
        position: usize,
        token: usize,
        vocab_size: usize,
    },

    #[error("{path}:{line}: field `{field}`: {message}")]
    Schema {
        path: String,
        line: usize,
        field: String,
        message: String,
    },

    #[error("{count} scene(s) rejected: {report}")]
    Rejected { count: usize, report: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("non-finite loss ({loss}) in {phase} epoch {epoch} batch {batch}; dump written to {dump:?}")]
    NonFinite {
        phase: String,
        epoch: usize,
        batch: usize,
        loss: f64,
        dump: Option<PathBuf>,
    },

    #[error("usage: {0}")]
    Usage(String),

    #[error("gradient check failed for {}", failed.join(", "))]
    GradCheck { failed: Vec<String> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } | Error::GradCheck { .. } => 2,
            _ => 1,
        }
    }
}
