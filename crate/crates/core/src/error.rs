use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no foreground object found in photo")]
    NoForegroundFound,
    #[error("largest foreground component covers {coverage:.3} of the photo (limit 0.9)")]
    AmbiguousForeground { coverage: f64 },
    #[error("could not place instance {instance} without overlap after {retries} retries")]
    PlacementFailure { instance: usize, retries: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown head `{0}`")]
    UnknownHead(String),
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("key queue is empty")]
    EmptyQueue,
    #[error("batch of {batch} keys exceeds queue capacity {capacity}")]
    BatchTooLarge { batch: usize, capacity: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("every learning-rate step increased the loss")]
    AllDiverged,
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec failure on {path}: {source}")]
    Codec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}
