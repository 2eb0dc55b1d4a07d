use std::path::PathBuf;

/// Errors produced by dataset handling, graph construction, training and
/// estimation. Variants carry enough context to report the offending file,
/// index or value without a backtrace.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("data file {path}: expected {expected} bytes for {n} x {d} f32 rows, found {found}")]
    DataSize {
        path: PathBuf,
        expected: u64,
        found: u64,
        n: usize,
        d: usize,
    },

    #[error("label file {path}, line {line}: {reason}")]
    Label {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("embedding row {index} has norm {norm:.3e}, cannot normalize")]
    ZeroNorm { index: usize, norm: f64 },

    #[error("dimension mismatch: {context} expects {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter {name}={value}: {reason}")]
    InvalidParam {
        name: &'static str,
        value: String,
        reason: &'static str,
    },

    #[error("knn cache {path}: {reason}")]
    Cache { path: PathBuf, reason: String },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("{context}: need at least {needed} samples, got {got}")]
    TooFewSamples {
        context: &'static str,
        needed: usize,
        got: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn manifest(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Manifest {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn invalid(name: &'static str, value: impl ToString, reason: &'static str) -> Self {
        Error::InvalidParam {
            name,
            value: value.to_string(),
            reason,
        }
    }
}
