use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants map onto the failure classes the
/// pipeline distinguishes: bad tensor shapes, bad configuration, missing
/// runtime state, unparseable inputs, data assembly problems, degenerate
/// metric inputs, training divergence, and model-file defects.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing state: {0}")]
    State(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("corrupt manifest in {path}: {detail}")]
    CorruptManifest { path: PathBuf, detail: String },

    #[error("shape validation failed for `{name}`: expected {expected}, manifest has {found}")]
    ManifestShape {
        name: String,
        expected: String,
        found: String,
    },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("embedding sweep failed at dim {dim}")]
    SweepDim {
        dim: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
