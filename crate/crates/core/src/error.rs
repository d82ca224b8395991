use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("batch norm needs at least 2 samples in train mode, got {0}")]
    BatchTooSmall(usize),

    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidRate(f64),

    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("manifest has no `#range=<lo>,<hi>` directive")]
    MissingRange,

    #[error("score {score} at line {line} is outside range [{lo}, {hi}]")]
    ScoreOutOfRange {
        line: usize,
        score: f64,
        lo: f64,
        hi: f64,
    },

    #[error("too few samples ({n}) to fill every split")]
    TooFewSamples { n: usize },

    #[error("unsupported image format in {0}")]
    UnsupportedFormat(PathBuf),

    #[error("corrupt image {path}: {msg}")]
    CorruptImage { path: PathBuf, msg: String },

    #[error("model has no spatial layer for Grad-CAM: {0}")]
    NoSpatialLayer(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
