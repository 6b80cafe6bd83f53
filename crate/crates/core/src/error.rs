use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("budget of {requested_words} words / {requested_images} images exceeds corpus capacity of {available_words} words / {available_images} images")]
    Capacity {
        requested_words: u64,
        requested_images: u64,
        available_words: u64,
        available_images: u64,
    },

    #[error("degenerate codebook: {distinct} distinct patches for {k} centroids")]
    DegenerateCodebook { distinct: usize, k: usize },

    #[error("all sampling weights are zero")]
    SchedulingExhausted,

    #[error("shape error: {0}")]
    Shape(String),

    #[error("sequence of length {len} exceeds maximum {max}")]
    Length { len: usize, max: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("loss has no targets")]
    EmptyTargets,

    #[error("token `{0}` is not in the vocabulary")]
    UnknownToken(String),

    #[error("non-finite loss {loss} at step {step} on task {task}")]
    NonFinite { step: u64, task: String, loss: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
