use std::path::PathBuf;

use crate::volume::Dims;

/// Errors produced by the refinement engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimsMismatch { expected: Dims, actual: Dims },

    #[error("invalid dimensions {0}")]
    InvalidDims(String),

    #[error("data length {actual} does not match dims {dims} ({expected} voxels)")]
    DataLength { dims: Dims, expected: usize, actual: usize },

    #[error("value {value} at index {index} is outside {what}")]
    InvalidValue {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("voxel ({x}, {y}, {z}) is outside volume {dims}")]
    OutOfBounds { x: i64, y: i64, z: i64, dims: Dims },

    #[error("seed list is empty")]
    EmptySeeds,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("episode already finished after {0} steps")]
    EpisodeDone(usize),

    #[error("empty episode trace")]
    EmptyTrace,

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training diverged at epoch {epoch}: non-finite {what}")]
    Diverged { epoch: usize, what: &'static str },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
