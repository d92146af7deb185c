use std::fmt;

use complat_core::ErrorClass;

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self { class: ErrorClass::Usage, message: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self { class: ErrorClass::Data, message: msg.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<complat_core::Error> for CliError {
    fn from(e: complat_core::Error) -> Self {
        Self { class: e.class(), message: e.to_string() }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::data(e.to_string())
    }
}

/// Attaches a path to an I/O failure.
pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}
