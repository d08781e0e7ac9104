use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PicsError> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
#[derive(Debug, Error)]
pub enum PicsError {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("target {target:?} larger than source {source_dims:?}")]
    TargetLargerThanSource {
        target: (usize, usize),
        source_dims: (usize, usize),
    },

    #[error("odd dimension {0:?}, expected even height and width")]
    OddDimension((usize, usize)),

    #[error("dimensions {dims:?} not divisible by {divisor}")]
    NonDivisible { dims: (usize, usize), divisor: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("constant image: {0}")]
    ConstantImage(&'static str),

    #[error("shift ({dy}, {dx}) exceeds crop margin {margin}")]
    ShiftExceedsMargin { dy: i64, dx: i64, margin: usize },

    #[error("duplicate field: {0}")]
    DuplicateField(String),

    #[error("unparseable filename: {0}")]
    UnparseableFilename(String),

    #[error("insufficient records: need more than {needed}, have {available}")]
    InsufficientRecords { needed: usize, available: usize },

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("stale cache: {0}")]
    StaleCache(&'static str),

    #[error("channel mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at step {step} (batch {batch}): {components}")]
    NonFiniteLoss {
        step: usize,
        batch: usize,
        components: String,
    },

    #[error("constant target: Pearson correlation undefined")]
    ConstantTarget,

    #[error("unknown class: {0}")]
    UnknownClass(String),

    #[error("unit mismatch: expected {expected}, got {actual}")]
    UnitMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("empty normalization window: no frame at or before {0} h")]
    EmptyNormalizationWindow(f64),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl PicsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PicsError::Io {
            path: path.into(),
            source,
        }
    }
}
