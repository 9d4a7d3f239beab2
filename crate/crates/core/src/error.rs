use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("degenerate scale: max ({max}) must exceed min ({min})")]
    DegenerateScale { min: f64, max: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("channel '{0}' has zero variance")]
    ZeroVariance(String),

    #[error("channel length mismatch: '{name}' has {actual} samples, expected {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        actual: usize,
    },

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("window too small to stack: {0} < 50")]
    WindowTooSmall(usize),

    #[error("invalid reconstruction: error is NaN")]
    InvalidReconstruction,

    #[error("corrupt sample: {0}")]
    CorruptSample(f64),

    #[error("invalid threshold input: {0}")]
    InvalidThresholdInput(String),

    #[error("overlapping segments: [{first_start}, {first_end}) and [{second_start}, {second_end})")]
    OverlappingSegments {
        first_start: usize,
        first_end: usize,
        second_start: usize,
        second_end: usize,
    },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("channel '{requested}' not found; available: {available}")]
    MissingChannel { requested: String, available: String },

    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("non-uniform sampling at line {line}: step {step_s}s vs expected {expected_s}s")]
    NonUniformSampling {
        line: u64,
        step_s: f64,
        expected_s: f64,
    },

    #[error("unsupported model format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("{path}: {source}")]
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

    pub(crate) fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }

    /// Whether the failure stems from caller-supplied data rather than a bug.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::OverlappingSegments { .. })
    }
}
