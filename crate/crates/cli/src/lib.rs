//! Library side of the `fedtraffic` command-line tool: configuration,
//! run manifests and the four commands.

use std::fmt;

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{compare, generate, train, validate, LoadedScenario};
pub use config::{Overrides, RunConfig};
pub use manifest::RunManifest;

/// Command failure, split by exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Bad configuration or input data; exit code 1.
    Validation(String),
    /// Failure while running; exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "run failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}
