use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported raster format: {0}")]
    UnsupportedFormat(String),

    #[error("truncated raster: expected {expected} bytes of sample data, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("zero image dimensions")]
    ZeroDimensions,

    #[error("sample {value} at index {index} outside [0, 1]")]
    SampleRange { index: usize, value: f64 },

    #[error("sample buffer length {len} does not match {width}x{height}")]
    BufferLength {
        width: usize,
        height: usize,
        len: usize,
    },

    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("odd dimensions {0}x{1}; Bayer mosaics need even width and height")]
    OddDimensions(usize, usize),

    #[error("mask selects no pixels")]
    EmptyMask,

    #[error("missing field `{0}` in metadata")]
    MissingField(String),

    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),

    #[error("invalid settings: {0}")]
    InvalidSettings(String),

    #[error("no record for lens `{0}`")]
    NoRecord(String),

    #[error("interpolation needs at least two records for lens `{0}`")]
    TooFewRecords(String),

    #[error("malformed database line {line}: {message}")]
    Database { line: usize, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
