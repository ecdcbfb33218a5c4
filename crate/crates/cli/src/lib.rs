//! File formats, configuration and command implementations for the `slime`
//! binary. The numerical work lives in `slime-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod jsonl;
pub mod report;
pub mod rundir;

use thiserror::Error;

/// Exit status of a command.
///
/// `0` success, `1` a check or validation failed, `2` the run aborted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    CheckFailed,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] config::ConfigError),

    #[error(transparent)]
    Data(#[from] jsonl::JsonlError),

    #[error("{0}")]
    Invalid(slime_core::Error),

    #[error("run aborted: {0}")]
    Abort(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Data(_) | CliError::Invalid(_) => 1,
            CliError::Abort(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Abort(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Abort(e.into())
    }
}
