use std::path::PathBuf;

use sfd_core::SfdError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] SfdError),

    #[error("invalid arguments: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {message}")]
    Table { path: PathBuf, message: String },
}

impl CliError {
    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        CliError::Csv {
            path: path.into(),
            source,
        }
    }

    /// 1 validation, 2 runtime/divergence, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Table { .. } => EXIT_VALIDATION,
            CliError::Csv { source, .. } if source.is_io_error() => EXIT_IO,
            CliError::Csv { .. } => EXIT_VALIDATION,
            CliError::Core(e) => match e {
                SfdError::Config(_)
                | SfdError::Shape(_)
                | SfdError::InvalidImage(_)
                | SfdError::UnknownTap { .. }
                | SfdError::UndefinedCorrelation(_)
                | SfdError::TextEmbedderUnavailable => EXIT_VALIDATION,
                SfdError::Io { .. }
                | SfdError::Decode { .. }
                | SfdError::Checksum(_)
                | SfdError::Format(_)
                | SfdError::Version { .. } => EXIT_IO,
                SfdError::NonFinite { .. }
                | SfdError::Divergence { .. }
                | SfdError::ZeroNorm(_)
                | SfdError::NotLoaded(_) => EXIT_RUNTIME,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_convention() {
        let cases = [
            (CliError::Usage("x".into()), EXIT_VALIDATION),
            (SfdError::Config("x".into()).into(), EXIT_VALIDATION),
            (
                SfdError::Divergence {
                    step: 3,
                    term: "g".into(),
                    last_good: None,
                }
                .into(),
                EXIT_RUNTIME,
            ),
            (
                SfdError::io("p", std::io::Error::from(std::io::ErrorKind::NotFound)).into(),
                EXIT_IO,
            ),
            (SfdError::Checksum("x".into()).into(), EXIT_IO),
        ];
        for (err, code) in cases {
            assert_eq!(err.exit_code(), code, "{err}");
        }
    }
}
