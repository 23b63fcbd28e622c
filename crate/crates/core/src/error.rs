use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value produced by {op} at node {node}")]
    Numeric { op: &'static str, node: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("synthetic data became non-finite at distillation step {step}")]
    DistillDiverged { step: usize },

    #[error("degenerate trajectory: start and target snapshots coincide")]
    DegenerateTrajectory,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
