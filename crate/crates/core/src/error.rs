use std::path::PathBuf;

/// Errors produced by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty sequence")]
    EmptySequence,

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid chunk span {index}: {reason}")]
    InvalidSpan { index: usize, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("undefined cosine: zero-norm vector")]
    UndefinedCosine,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing batch component: {0}")]
    MissingComponent(&'static str),

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    OutOfVocab { id: u32, vocab: usize },

    #[error("mask id {0} occurs in the clean sequence")]
    MaskIdInSequence(u32),

    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("unsatisfiable quota for stratum {stratum}: requested {requested}, available {available}")]
    UnsatisfiableQuota {
        stratum: String,
        requested: usize,
        available: usize,
    },

    #[error("no scoreable queries")]
    NoScoreableQueries,

    #[error("empty index")]
    EmptyIndex,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("bad file format: {0}")]
    Format(String),

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
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
