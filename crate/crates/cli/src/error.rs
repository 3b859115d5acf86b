use thiserror::Error;

/// Failure of a subcommand, mapped to the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Compute(String),
    #[error("only {completed} of {total} replicates completed")]
    Incomplete { completed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Compute(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Incomplete { .. } => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<sdemap::Error> for CliError {
    fn from(e: sdemap::Error) -> Self {
        CliError::Compute(e.to_string())
    }
}
