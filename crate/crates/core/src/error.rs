use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} outside the admissible range {range}")]
    TimeOutOfRange { t: f64, range: &'static str },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("stage-1 step to s={s} is below the validity threshold {threshold}")]
    StageViolation { s: f64, threshold: f64 },

    #[error("negative noise variance {radicand} (w={w}, s={s}, t={t})")]
    InvalidW { w: f64, s: f64, t: f64, radicand: f64 },

    #[error("numeric divergence at step {step}: {what}")]
    Divergence { step: usize, what: String },

    #[error("tape does not match the network: {0}")]
    TapeMismatch(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("config error: {0}")]
    Config(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } | Error::NonFinite(_) => 3,
            Error::Io { .. } | Error::MissingFile(_) | Error::Format { .. } => 4,
            _ => 2,
        }
    }
}
