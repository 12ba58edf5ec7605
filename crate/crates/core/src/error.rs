use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("invalid metadata in {}: {message}", path.display())]
    Metadata { path: PathBuf, message: String },

    #[error("payload {} has {actual} bytes, metadata requires {expected}", path.display())]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("non-finite value {value} at index {index} (row {row}, col {col}) in {}", path.display())]
    NonFinite {
        path: PathBuf,
        index: usize,
        row: usize,
        col: usize,
        value: f32,
    },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("concept file {} contains no concepts", path.display())]
    EmptyConcepts { path: PathBuf },

    #[error("duplicate concept {duplicate:?} on line {line} (first seen as {first:?})")]
    DuplicateConcept {
        duplicate: String,
        first: String,
        line: usize,
    },

    #[error("row {row} of {what} has zero norm")]
    ZeroNorm { what: String, row: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("neuron is degenerate (constant activation vector)")]
    DegenerateNeuron,

    #[error(
        "score matrix of {cells} cells exceeds the cap of {cap}; request chunk streaming instead"
    )]
    CapExceeded { cells: usize, cap: usize },

    #[error("malformed JSON in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the inputs' content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
