use std::path::Path;

/// Failure classes with distinct process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input files, configuration, or arguments (exit 2).
    #[error("{0}")]
    Input(String),
    /// Numerical breakdown such as a non-finite loss (exit 3).
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Input(format!("{}: {}", path.display(), err))
    }

    /// Prefixes the message with `context`, keeping the class.
    pub fn context(self, context: impl std::fmt::Display) -> Self {
        match self {
            CliError::Input(m) => CliError::Input(format!("{context}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{context}: {m}")),
        }
    }
}

impl From<kanflow_core::Error> for CliError {
    fn from(e: kanflow_core::Error) -> Self {
        match e {
            kanflow_core::Error::NonFinite(_) => CliError::Numeric(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
