use std::fmt::Display;

/// Failure classes, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Runtime(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Data(_) => "data",
            Self::Runtime(_) => "runtime",
        }
    }

    /// The single stderr line printed on failure.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "error": { "kind": self.kind(), "code": self.exit_code(), "message": self.to_string() }
        })
        .to_string()
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tags any displayable error with a failure class.
pub trait Classify<T> {
    fn config(self) -> CliResult<T>;
    fn data(self) -> CliResult<T>;
    fn runtime(self) -> CliResult<T>;
}

impl<T, E: Display> Classify<T> for Result<T, E> {
    fn config(self) -> CliResult<T> {
        self.map_err(|e| CliError::Config(e.to_string()))
    }

    fn data(self) -> CliResult<T> {
        self.map_err(|e| CliError::Data(e.to_string()))
    }

    fn runtime(self) -> CliResult<T> {
        self.map_err(|e| CliError::Runtime(e.to_string()))
    }
}
