use std::io;
use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid configuration or command line; exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// A run started but did not finish; exit code 1.
    #[error("run failed: {0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Run(_) => ExitCode::from(1),
        }
    }
}

impl From<feather_core::Error> for CliError {
    fn from(e: feather_core::Error) -> Self {
        match e {
            feather_core::Error::Contract(_) | feather_core::Error::Dimension { .. } => CliError::Config(e.to_string()),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Run(e.to_string())
    }
}
