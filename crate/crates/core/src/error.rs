use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in `{path}`: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("array contains a non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("size mismatch for `{path}`: expected {expected} bytes, found {found}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("subject `{0}` is not in the manifest")]
    MissingSubject(String),

    #[error("video track `{0}` is not in the manifest")]
    MissingTrack(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid filter parameters: {0}")]
    Filter(String),

    #[error("cannot normalize an all-zero signal")]
    ZeroSignal,

    #[error("segment out of bounds: {0}")]
    OutOfBounds(String),

    #[error("not enough subjects: need {needed}, have {available}")]
    InsufficientSubjects { needed: usize, available: usize },

    #[error("cannot parse model spec `{spec}`: {reason}")]
    Spec { spec: String, reason: String },

    #[error("incompatible branch outputs: {0}")]
    IncompatibleBranches(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (flags, config files, model
    /// specs) rather than by data or the filesystem.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Json { .. }
                | Error::Spec { .. }
                | Error::Config(_)
                | Error::Filter(_)
                | Error::IncompatibleBranches(_)
        )
    }
}
