use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("feature rows mismatch: expected {expected} values, got {actual}")]
    FeatureShape { expected: usize, actual: usize },
    #[error("face {face} references vertex {index} but mesh has {vertices} vertices")]
    FaceIndex { face: usize, index: usize, vertices: usize },
    #[error("degenerate triangle")]
    DegenerateTriangle,
    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("all reference points coincide; cannot normalize")]
    ZeroScale,
    #[error("assignment size {n} exceeds exact solver cap {cap}")]
    AboveCap { n: usize, cap: usize },
    #[error("feature width mismatch: model expects {expected}, input has {actual}")]
    FeatureWidth { expected: usize, actual: usize },
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),
    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), msg: msg.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
