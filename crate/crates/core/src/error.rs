use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("expected sample rate {expected} Hz, got {found} Hz")]
    WrongSampleRate { expected: u32, found: u32 },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("inconsistent spectrogram geometry: {0}")]
    InconsistentGeometry(String),
    #[error("expected {expected} frequency bins, got {found}")]
    WrongBinCount { expected: usize, found: usize },
    #[error("noise signal has zero power")]
    ZeroPowerNoise,
    #[error("clean signal has zero power")]
    ZeroPowerClean,
    #[error("input matrix has no positive entry")]
    AllZeroInput,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("empty track list")]
    EmptyTrackList,
    #[error("proposal bag would be empty")]
    EmptyBag,
    #[error("duplicate proposal origin {0}")]
    DuplicateOrigin(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("score matrix has no NCP rows")]
    NoNcpRows,
    #[error("component {0} has no NCP rows")]
    MissingComponent(usize),
    #[error("reference signal has zero energy")]
    ZeroReference,
    #[error("noise corpus is empty")]
    EmptyNoiseCorpus,
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("invalid manifest line {line}: {reason}")]
    InvalidManifest { line: usize, reason: String },
    #[error("file is truncated")]
    TruncatedFile,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("non-finite value encountered: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by numerics rather than bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::Domain(_) | Error::AllZeroInput)
    }
}
