//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty batch: no examples to update on")]
    EmptyBatch,

    #[error("non-finite parameter after update at step {step}")]
    NonFiniteUpdate { step: u64 },

    #[error("noise ratio {ratio} outside [0, 100)")]
    InvalidRatio { ratio: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("selection sets have mixed scopes")]
    MixedScopes,

    #[error("temporal pool epochs must increase: got {got} after {last}")]
    NonIncreasingEpoch { last: u64, got: u64 },

    #[error("unknown example id {0}")]
    UnknownId(u64),

    #[error("{path}: bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    IdxBadMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated IDX file: needed {needed} bytes, found {found}")]
    IdxTruncated {
        path: String,
        needed: usize,
        found: usize,
    },

    #[error("IDX image/label count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("open-set source has {have} examples, need {need}")]
    InsufficientSource { have: usize, need: usize },

    #[error("invalid split fractions: train {train}, test {test}")]
    InvalidSplit { train: f64, test: f64 },

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("aggregate over runs with unequal epoch counts: {0} vs {1}")]
    UnequalEpochCounts(usize, usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("columnar parse error at line {line}: {msg}")]
    ColumnarParse { line: usize, msg: String },
}
