//! Error taxonomy for the command-line pipeline, mapped to process exit
//! codes: 1 for usage/config problems, 2 for data validation problems,
//! 3 for runtime failures.

use std::fmt;

/// Pipeline failure with an associated exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration: unknown flags, unreadable or
    /// invalid config file, missing required fields.
    Config(String),
    /// Input data failed validation: malformed TSV, unknown ids,
    /// an artifact whose content no longer matches its manifest.
    Data(String),
    /// A stage failed while executing: I/O, training, encoding.
    Runtime(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}
