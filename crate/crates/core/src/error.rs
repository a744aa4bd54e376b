use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no frames")]
    NoFrames,

    #[error("{path}: row {row}: expected {expected} columns, found {found}")]
    RaggedRow {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}: row {row}, column {column}: cannot parse {cell:?} as a number")]
    ParseCell {
        path: PathBuf,
        row: usize,
        column: usize,
        cell: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("frame {frame}: shape {found} does not match {expected}")]
    ShapeMismatch {
        frame: usize,
        expected: String,
        found: String,
    },

    #[error("frame {frame}: payload contains a non-finite value")]
    NonFinite { frame: usize },

    #[error("frame {frame}: pixel value {value} outside [0, 1]")]
    PixelRange { frame: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("insufficient data: need at least {needed} frames, have {have}")]
    InsufficientData { needed: usize, have: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ground truth must contain both classes")]
    SingleClass,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("pseudo-label sets overlap: {anomalies} anomalies + {normals} normals > {frames} frames")]
    LabelOverlap {
        anomalies: usize,
        normals: usize,
        frames: usize,
    },

    #[error("architecture {arch} does not accept {input} input")]
    ArchMismatch { arch: String, input: String },

    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("config key {key:?}: {message}")]
    Config { key: String, message: String },

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
