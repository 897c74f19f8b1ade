use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const MISSING_ARTIFACT: i32 = 2;
    pub const VALIDATION: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing artifact {}: run `safesite {stage}` first", path.display())]
    MissingArtifact { stage: &'static str, path: PathBuf },
    #[error("{0}")]
    Validation(String),
    #[error("refusing to overwrite {}: pass --force to replace it", .0.display())]
    Exists(PathBuf),
    #[error(transparent)]
    Core(#[from] safesite::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Exists(_) => exit::USAGE,
            CliError::MissingArtifact { .. } => exit::MISSING_ARTIFACT,
            CliError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => exit::MISSING_ARTIFACT,
            CliError::Io { .. } => exit::USAGE,
            CliError::Validation(_) | CliError::Core(_) => exit::VALIDATION,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
