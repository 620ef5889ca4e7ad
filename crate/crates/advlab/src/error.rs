use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate sample: zero variance, skewness/kurtosis undefined")]
    DegenerateSample,
    #[error("empty resampling pool")]
    EmptyPool,
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: needed {needed} bytes, found {found}")]
    TruncatedFile { needed: usize, found: usize },
    #[error("label byte {value} out of range [0,9] at record {index}")]
    LabelOutOfRange { index: usize, value: u8 },
    #[error("degenerate data: all pixels identical, standardization undefined")]
    DegenerateData,
    #[error("model classifies only {available} examples correctly, {requested} requested")]
    InsufficientCorrect { available: usize, requested: usize },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("bad model file header")]
    BadHeader,
    #[error("unsupported model file version {found} (supported: {supported})")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("penalty search failed: no success up to C = {cap}")]
    AttackFailed { cap: f64 },
    #[error("attack run contains no successful cases")]
    NoSuccessfulCases,
    #[error("schema mismatch in {path}: {detail}")]
    SchemaMismatch { path: PathBuf, detail: String },
    #[error("probe outcomes do not share a common lambda grid")]
    InconsistentGrid,
    #[error("empty selection")]
    EmptySelection,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
