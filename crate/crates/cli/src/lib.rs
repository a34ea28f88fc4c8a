//! Pipeline commands behind the `mmtrans` binary.

pub mod commands;
pub mod config;

use std::fmt;

pub use config::RunConfig;

/// Process exit status of a failed command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Internal = 1,
    Input = 2,
    Lookup = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Input, message: message.into() }
    }

    pub fn lookup(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Lookup, message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Internal, message: message.into() }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;
