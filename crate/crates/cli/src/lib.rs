//! Library surface of the command-line driver (kept as a lib so integration
//! tests can exercise configuration and orchestration directly).

pub mod commands;
pub mod config;

use std::fmt;

/// Exit codes: 0 success, 2 configuration error, 3 numeric abort, 4 I/O.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> CliError {
        CliError::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> CliError {
        CliError::Numeric(msg.into())
    }

    pub fn io(e: std::io::Error) -> CliError {
        CliError::Io(e.to_string())
    }

    pub fn from_core(e: pnp_core::Error) -> CliError {
        match e {
            pnp_core::Error::Io(io) => CliError::Io(io.to_string()),
            pnp_core::Error::Numeric(msg) => CliError::Numeric(msg),
            other => CliError::Config(other.to_string()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numeric(_) => "numeric",
            CliError::Io(_) => "io",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Io(m) => m,
        };
        write!(f, "{}: {}", self.kind(), msg)
    }
}

impl std::error::Error for CliError {}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}
