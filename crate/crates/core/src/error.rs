use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("non-finite value in input")]
    NonFiniteInput,

    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {gap}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("zero-norm vector has no direction")]
    ZeroNorm,

    #[error("covariance needs at least 2 samples, have {count}")]
    InsufficientData { count: u64 },

    #[error("class {class} has no samples")]
    EmptyClass { class: u32 },

    #[error("training data must contain at least two classes")]
    SingleClass,

    #[error("loss became non-finite at epoch {epoch}; learning rate too large?")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("class {class} scheduled but absent from the {split} split")]
    ScheduleClassMissing { class: u32, split: &'static str },

    #[error("invalid session permutation: {0}")]
    InvalidPermutation(String),

    #[error("first-session accuracy is zero; PPDR undefined")]
    ZeroFirstAccuracy,

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("file truncated: {0}")]
    TruncatedFile(String),

    #[error("unexpected trailing bytes after {records} records")]
    TrailingData { records: u64 },

    #[error("non-finite feature in record {index}")]
    NonFiniteFeature { index: u64 },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
