use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("batch normalization in train mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),

    #[error("rotation angle {angle} is within 1e-6 of pi; axis is ill-defined")]
    NearPiRotation { angle: f64 },

    #[error("elevation {elevation} is within 1e-6 of +-pi/2; azimuth is ill-defined")]
    GimbalLock { elevation: f64 },

    #[error("value {value} outside valid range {range}")]
    InvalidRange { value: f64, range: &'static str },

    #[error("matrix is not a rotation (orthogonality error {orthogonality:e}, det {det})")]
    NotARotation { orthogonality: f64, det: f64 },

    #[error("index {index} out of range for {len} categories")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("category {0} has no samples")]
    CategoryWithNoSamples(usize),

    #[error("batch size {batch} is smaller than category count {categories}")]
    BatchSmallerThanK { batch: usize, categories: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("category {0} has no samples in the evaluated split")]
    EmptyCategory(usize),

    #[error("top-k needs 1 <= k <= {categories}, got {k}")]
    InvalidK { k: usize, categories: usize },

    #[error("non-finite loss in phase {phase} at epoch {epoch}")]
    NonFiniteLoss { phase: String, epoch: usize },

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },

    #[error("{path}: schema error: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
