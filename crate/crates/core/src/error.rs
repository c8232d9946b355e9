use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("sample count exceeds population ({requested} > {available})")]
    SampleCountExceedsPopulation { requested: usize, available: usize },

    #[error("neighbor count {k} exceeds support count {support}")]
    NeighborCountTooLarge { k: usize, support: usize },

    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("degenerate neighborhood: {0} points, need at least 3")]
    DegenerateNeighborhood(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("normals are not unit length (norm {norm} at row {row})")]
    NonUnitNormal { row: usize, norm: f64 },

    #[error("PLAM requires normals")]
    MissingNormals,

    #[error("stage point count mismatch: expected {expected}, got {actual}")]
    StagePointCount { expected: usize, actual: usize },

    #[error("invalid label {label} for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Reads that hit end-of-file mid-record surface as truncation rather than raw I/O.
    pub(crate) fn from_read(err: io::Error, what: &str) -> Self {
        if err.kind() == io::ErrorKind::UnexpectedEof {
            Error::Truncated(what.to_string())
        } else {
            Error::Io(err)
        }
    }
}
