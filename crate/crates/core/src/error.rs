use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("input too short: need at least {needed}, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no positive similarity: all normalized scores are zero")]
    NoPositiveSimilarity,

    #[error("inverse weights undefined: every normalized score equals 1")]
    InverseUndefined,

    #[error("missing head `{0}`")]
    MissingHead(String),

    #[error("universe too crowded: could not place {clusters} clusters {min_dist} apart after {attempts} attempts")]
    UniverseTooCrowded { clusters: usize, min_dist: f64, attempts: usize },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("source `{source_id}` failed: {reason}")]
    Source { source_id: String, reason: String },

    #[error("bad magic bytes in {0}")]
    BadMagic(PathBuf),

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload { path: PathBuf, expected: u64, found: u64 },

    #[error("matrix size overflow: {rows} x {cols}")]
    SizeOverflow { rows: u32, cols: u32 },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("[{stage}] missing prerequisite {path}: run `{needs}` first")]
    MissingPrerequisite { stage: &'static str, path: PathBuf, needs: &'static str },

    #[error("[{stage}] {source}")]
    Stage { stage: &'static str, source: Box<Error> },

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Tags the error with the pipeline stage it came from, unless it already
    /// carries one.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ (Error::Stage { .. } | Error::MissingPrerequisite { .. }) => e,
            other => Error::Stage { stage, source: Box::new(other) },
        }
    }

    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } | Error::MissingPrerequisite { stage, .. } => Some(stage),
            _ => None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape { expected: expected.to_string(), got: got.to_string() }
    }
}
