use thiserror::Error;

/// A failed command. The variant picks the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration or input data.
    #[error("{0}")]
    Validation(String),
    /// Valid input, but the run could not complete.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    /// Prefixes the message with where it happened.
    pub fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{what}: {m}")),
            CliError::Runtime(m) => CliError::Runtime(format!("{what}: {m}")),
        }
    }
}

impl From<orient_core::Error> for CliError {
    fn from(e: orient_core::Error) -> Self {
        use orient_core::Error as E;
        match e {
            E::InvalidConfig(_)
            | E::DimensionMismatch { .. }
            | E::Empty(_)
            | E::Record { .. }
            | E::Json(_)
            | E::MissingLabel { .. }
            | E::UnknownSample { .. }
            | E::SelfPair(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
