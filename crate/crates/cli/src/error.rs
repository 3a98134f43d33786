use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("{name}: {message}")]
    Solver { name: &'static str, message: String },
    #[error("IncompatibleRuns: {0}")]
    IncompatibleRuns(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn solver(name: &'static str, message: impl ToString) -> Self {
        CliError::Solver { name, message: message.to_string() }
    }

    /// 2 for bad input, 3 for solver failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::IncompatibleRuns(_) => 2,
            CliError::Solver { .. } => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
