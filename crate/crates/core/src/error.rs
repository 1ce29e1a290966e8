use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EafError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("frame {index} is {height}x{width}, smaller than the minimum {min}x{min} needed for quadrant crops")]
    FrameTooSmall {
        index: usize,
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("video shorter than window: {frames} frames < window width {window}")]
    VideoShorterThanWindow { frames: usize, window: usize },

    #[error("no valid face frames: every face detection failed")]
    NoValidFaceFrames,

    #[error("no valid rows to interpolate from")]
    NoValidRows,

    #[error("sequence too short for two pooling stages: length {0} < 4")]
    SequenceTooShort(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cosine similarity undefined for zero-norm pooled vector (row {row} of {side})")]
    ZeroNorm { side: &'static str, row: usize },

    #[error("target token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("prompt template must contain the feature placeholder exactly once (found {0})")]
    Placeholder(usize),

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("non-finite loss at step {step}: {value}")]
    NonFiniteLoss { step: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, EafError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> EafError {
    let path = path.into();
    move |source| EafError::Io { path, source }
}

pub(crate) fn json_err(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> EafError {
    let path = path.into();
    move |source| EafError::Json { path, source }
}
