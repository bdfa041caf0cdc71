use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by the process exit bucket they map to when surfaced
/// through the CLI: data/IO problems exit with 2, numeric/dimension problems
/// with 3 (usage errors are handled before any of these are constructed).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs} vs {rhs}")]
    Dimension { op: String, lhs: String, rhs: String },

    #[error("sequence too short: need at least {needed} timesteps, got {got}")]
    SequenceTooShort { needed: usize, got: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("degenerate batch: need at least 2 rows in train mode, got {rows}")]
    DegenerateBatch { rows: usize },

    #[error("invalid dropout rate {0}: must satisfy 0 <= rate < 1")]
    InvalidRate(f64),

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("label {0} out of range 0..5")]
    Label(usize),

    #[error("backward called on an empty tape")]
    TapeEmpty,

    #[error("optimizer not ready: parameter {0} has no gradient")]
    NotReady(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("class {0} has fewer than 2 members; cannot pick neighbors")]
    DegenerateClass(String),

    #[error("too few records: need at least {needed}, got {got}")]
    TooFewRecords { needed: usize, got: usize },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad container magic")]
    BadMagic,

    #[error("unsupported container version {0}")]
    BadVersion(u16),

    #[error("crc mismatch in entry {0}")]
    Crc(String),

    #[error("container truncated: {0}")]
    Truncated(String),
}

impl Error {
    /// Shorthand for a dimension error naming both offending shapes.
    pub fn dim(op: &str, lhs: impl std::fmt::Debug, rhs: impl std::fmt::Debug) -> Self {
        Error::Dimension {
            op: op.to_string(),
            lhs: format!("{lhs:?}"),
            rhs: format!("{rhs:?}"),
        }
    }

    /// CLI exit bucket: 2 for data/IO failures, 3 for numeric/dimension ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Data(_)
            | Error::Ingestion(_)
            | Error::Io { .. }
            | Error::Config(_)
            | Error::Vocabulary(_)
            | Error::Label(_)
            | Error::DegenerateClass(_)
            | Error::TooFewRecords { .. }
            | Error::BadMagic
            | Error::BadVersion(_)
            | Error::Crc(_)
            | Error::Truncated(_) => 2,
            Error::Dimension { .. }
            | Error::SequenceTooShort { .. }
            | Error::EmptySequence
            | Error::DegenerateBatch { .. }
            | Error::InvalidRate(_)
            | Error::TapeEmpty
            | Error::NotReady(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
