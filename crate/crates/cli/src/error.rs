use std::fmt;

use nirm::NirmError;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub messages: Vec<String>,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, messages: vec![msg.into()] }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_RUNTIME, messages: vec![msg.into()] }
    }

    pub fn invalid_config(messages: Vec<String>) -> Self {
        CliError { code: EXIT_USAGE, messages }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.messages.join("\n"))
    }
}

impl std::error::Error for CliError {}

/// Bad input (unparseable files, invalid settings, refused overwrites) is a
/// usage error; everything else is a runtime failure.
impl From<NirmError> for CliError {
    fn from(e: NirmError) -> Self {
        let code = match e {
            NirmError::Parse { .. }
            | NirmError::Validation(_)
            | NirmError::TooManyItems { .. }
            | NirmError::AlreadyExists(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        CliError { code, messages: vec![e.to_string()] }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
