use afc_core::AfcError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }

    /// Prefixes the message with the scenario key it concerns.
    pub fn context(self, path: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{path}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{path}: {m}")),
            other => other,
        }
    }
}

impl From<AfcError> for CliError {
    fn from(e: AfcError) -> Self {
        match e {
            AfcError::Numerical(_) | AfcError::NumericalStep(_) => CliError::Numerical(e.to_string()),
            AfcError::Io(io) => CliError::Io(io),
            other => CliError::Config(other.to_string()),
        }
    }
}
