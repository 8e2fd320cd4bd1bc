use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value in input to {op}")]
    NonFinite { op: &'static str },

    #[error("gradient root must be a scalar, found shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("node id {id} out of range for graph with {n_nodes} nodes")]
    NodeOutOfRange { id: usize, n_nodes: usize },

    #[error("negative edge weight {weight} on edge {src}->{dst}")]
    NegativeWeight { src: usize, dst: usize, weight: f64 },

    #[error("duplicate edge {src}->{dst}")]
    DuplicateEdge { src: usize, dst: usize },

    #[error("unknown event kind `{0}`")]
    UnknownEventKind(String),

    #[error("empty window")]
    EmptyWindow,

    #[error("window has {found} steps, model expects {expected}")]
    WindowLength { expected: usize, found: usize },

    #[error("empty path")]
    EmptyPath,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("label count {labels} does not match prediction count {predictions}")]
    LengthMismatch { predictions: usize, labels: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("empty {0} split")]
    EmptySplit(&'static str),

    #[error("no path between {src} and {dst} after {budget} attempts")]
    Unreachable { src: usize, dst: usize, budget: usize },

    #[error("horizon overflow: window {window} + horizon {horizon} exceeds {steps} steps")]
    HorizonOverflow { window: usize, horizon: usize, steps: usize },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("{file}:{line}: {message}")]
    Schema { file: String, line: usize, message: String },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by bad user input rather than a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::MissingFile(_)
                | Error::Schema { .. }
                | Error::VersionMismatch { .. }
                | Error::MalformedCheckpoint(_)
                | Error::UnknownEventKind(_)
                | Error::NodeOutOfRange { .. }
                | Error::NegativeWeight { .. }
                | Error::DuplicateEdge { .. }
                | Error::WindowLength { .. }
                | Error::HorizonOverflow { .. }
                | Error::EmptySplit(_)
                | Error::Json(_)
        )
    }
}
