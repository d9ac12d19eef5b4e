use std::path::PathBuf;

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("cannot write {}: {source}", path.display())]
    Unwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("artifact mismatch: {0}")]
    Mismatch(String),
    #[error("the oracle needs the model, but the configuration marks it unknown")]
    ModelUnknown,
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Unwritable { .. } => 3,
            CliError::Mismatch(_) => 4,
            CliError::ModelUnknown => 5,
            CliError::Other(_) => 1,
        }
    }

    pub fn unwritable(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Unwritable {
            path: path.into(),
            source,
        }
    }
}

impl From<compsynth_core::Error> for CliError {
    fn from(e: compsynth_core::Error) -> Self {
        CliError::Other(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;
