use std::fmt;

use hcpanel::Error;

/// Process exit codes.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Error carrying the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Input problems exit with 2; factorization and other numerical failures
/// inside the library exit with 3.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Factorization { .. } => CliError::numeric(e.to_string()),
            _ => CliError::usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::usage(format!("i/o error: {e}"))
    }
}

/// Maps a library error raised while fitting: everything except a bad
/// configuration is a numerical failure.
pub fn solver_error(e: Error) -> CliError {
    match e {
        Error::Config(_) | Error::InvalidData(_) | Error::InsufficientData { .. } => CliError::usage(e.to_string()),
        _ => CliError::numeric(format!("solver failed: {e}")),
    }
}
