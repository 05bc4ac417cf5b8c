//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Result`]. The variants
//! are grouped by subsystem; file-format errors carry enough context to
//! locate the offending path.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- tensors and tape ----
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tensor shape contains a zero dimension: {0:?}")]
    EmptyShape(Vec<usize>),
    #[error("domain error in {op}: {detail}")]
    DomainError { op: &'static str, detail: String },
    #[error("backward requires a scalar output, got {elements} elements")]
    NotScalar { elements: usize },
    #[error("non-finite gradient encountered in {context}")]
    NonFiniteGradient { context: String },

    // ---- nn kernels ----
    #[error("convolution/pooling output would be empty: {0}")]
    EmptyOutput(String),
    #[error("pooling bin count {bin} exceeds spatial extent {extent}")]
    BinTooSmall { bin: usize, extent: usize },
    #[error("batch norm needs at least 2 samples per channel in train mode, got {samples}")]
    DegenerateBatch { samples: usize },

    // ---- models ----
    #[error("expected {expected} input channels, got {got}")]
    WrongChannelCount { expected: usize, got: usize },
    #[error("invalid model config: {0}")]
    ConfigInvalid(String),
    #[error("parameter pattern {pattern:?} matched nothing")]
    NoMatch { pattern: String },
    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint file: {0}")]
    CorruptFile(String),
    #[error("checkpoint is incompatible with the requested model: {0}")]
    IncompatibleCheckpoint(String),

    // ---- losses ----
    #[error("class weight w={0} outside (0, 1)")]
    WeightOutOfRange(f64),
    #[error("focal gamma must be >= 0, got {0}")]
    NegativeGamma(f64),
    #[error("label tensor contains non-binary value {0}")]
    NonBinaryLabel(f64),
    #[error("dataset contains no labeled pixels")]
    EmptyDataset,

    // ---- data pipeline ----
    #[error("corrupt stack header in {path}: {detail}")]
    CorruptHeader { path: PathBuf, detail: String },
    #[error("unsupported stack format version {0}")]
    UnknownVersion(u32),
    #[error("need at least {k} subjects for {k} folds, got {subjects}")]
    TooFewSubjects { k: usize, subjects: usize },
    #[error("no slices available for the {split} split of fold {fold}")]
    EmptySplit { split: &'static str, fold: usize },

    // ---- metrics ----
    #[error("surface distance undefined: {0} surface is empty")]
    EmptySurface(&'static str),
    #[error("cannot aggregate an empty group: {0}")]
    EmptyGroup(String),

    // ---- training ----
    #[error("non-finite training loss at epoch {epoch}, batch {batch}: {value}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },
    #[error("ensemble needs at least one model")]
    EmptyEnsemble,
    #[error("ensemble models disagree on input contract: {0}")]
    HeterogeneousInputs(String),

    // ---- io ----
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("image encode error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn shape(detail: impl Into<String>) -> Self {
        Error::ShapeMismatch(detail.into())
    }
}
