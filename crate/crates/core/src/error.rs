use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SfdError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    #[error("training diverged at step {step}: non-finite {term}{}", last_good_suffix(.last_good))]
    Divergence {
        step: u64,
        term: String,
        last_good: Option<PathBuf>,
    },

    #[error("zero-norm vector in {0}")]
    ZeroNorm(String),

    #[error("no text embedder configured")]
    TextEmbedderUnavailable,

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("unsupported archive version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("archive checksum failure: {0}")]
    Checksum(String),

    #[error("archive format error: {0}")]
    Format(String),

    #[error("model not loaded: {0}")]
    NotLoaded(String),

    #[error("unknown tap point `{name}`; available: {}", .available.join(", "))]
    UnknownTap { name: String, available: Vec<String> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Decode { path: PathBuf, message: String },
}

fn last_good_suffix(p: &Option<PathBuf>) -> String {
    match p {
        Some(p) => format!(" (last good checkpoint: {})", p.display()),
        None => String::new(),
    }
}

impl SfdError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SfdError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = SfdError> = std::result::Result<T, E>;

/// Fails with `NonFinite` when `v` is NaN or infinite.
pub(crate) fn ensure_finite(v: f64, term: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(SfdError::NonFinite { term: term.into() })
    }
}
