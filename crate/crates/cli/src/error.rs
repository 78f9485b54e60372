use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Diverged(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}

impl From<tas_core::Error> for CliError {
    fn from(e: tas_core::Error) -> Self {
        match e {
            tas_core::Error::Diverged { .. } => CliError::Diverged(e.to_string()),
            tas_core::Error::Io(source) => CliError::Io { path: PathBuf::from("<unknown>"), source },
            other => CliError::Usage(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
