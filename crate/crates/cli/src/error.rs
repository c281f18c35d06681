use std::fmt;

use hydra_core::HydraError;

/// Command failures, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad input or configuration. Exit code 1.
    Validation(String),
    /// Anything that went wrong while doing valid work. Exit code 2.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<HydraError> for CliError {
    fn from(e: HydraError) -> Self {
        match e {
            HydraError::Validation(_) | HydraError::NotFound(_) => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}
