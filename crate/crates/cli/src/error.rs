use std::path::PathBuf;

/// Failure of a command or pipeline, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: dynunc::Error,
    },
}

impl CliError {
    /// 1 for configuration and input problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Format { .. } => 1,
            CliError::Stage { source, .. } => match source {
                dynunc::Error::InvalidParameter(_) | dynunc::Error::Dimension(_) => 1,
                _ => 2,
            },
        }
    }

    pub fn stage_name(&self) -> Option<&'static str> {
        match self {
            CliError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Labels a library error with the pipeline stage it came from.
pub trait Stage<T> {
    fn stage(self, name: &'static str) -> Result<T>;
}

impl<T> Stage<T> for dynunc::Result<T> {
    fn stage(self, name: &'static str) -> Result<T> {
        self.map_err(|source| CliError::Stage { stage: name, source })
    }
}
