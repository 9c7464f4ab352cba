use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SaError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("row {row} has {found} columns, expected {expected}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("label count mismatch: {labels} labels for {rows} trace rows")]
    LabelCountMismatch { labels: usize, rows: usize },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("label {label} at row {row} is out of range for {num_classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("empty trace set")]
    Empty,

    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("cache miss: no entry {0}")]
    CacheMiss(String),

    #[error("corrupted cache entry {path}: {reason}")]
    CorruptCache { path: PathBuf, reason: String },

    #[error("invalid cache name {0:?}")]
    InvalidCacheName(String),

    #[error("no informative dimensions: every column has variance <= {threshold}")]
    NoInformativeDimensions { threshold: f64 },

    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),

    #[error("query dimensionality {found} does not match model dimensionality {expected}")]
    QueryDimension { expected: usize, found: usize },

    #[error("DSA requires >= 2 predicted classes in the training set, found {0}")]
    TooFewClasses(usize),

    #[error("query {query}: no training trace predicted as class {class}")]
    MissingClass { query: usize, class: usize },

    #[error("zero DSA denominator: training rows {row} and {other} have identical traces but different predicted labels")]
    ZeroDenominator { row: usize, other: usize },

    #[error("surprise adequacy not prepared: call prep before calc")]
    NotPrepared,

    #[error("fingerprint mismatch: cached state is for {cached}, training set is {actual}")]
    FingerprintMismatch { cached: String, actual: String },

    #[error("class {class}: {source}")]
    ClassKde {
        class: usize,
        #[source]
        source: Box<SaError>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl SaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SaError::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad user input (arguments, missing or
    /// malformed input files) as opposed to failures while computing.
    pub fn is_validation(&self) -> bool {
        match self {
            SaError::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            SaError::Parse(_)
            | SaError::DimensionMismatch { .. }
            | SaError::LabelCountMismatch { .. }
            | SaError::NonFinite { .. }
            | SaError::LabelOutOfRange { .. }
            | SaError::Empty
            | SaError::IndexOutOfRange { .. }
            | SaError::InvalidCacheName(_)
            | SaError::InvalidBandwidth(_)
            | SaError::QueryDimension { .. }
            | SaError::InvalidArgument(_) => true,
            _ => false,
        }
    }
}
