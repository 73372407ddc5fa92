//! Command implementations behind the `antlm` binary: configuration files,
//! checkpoints, metrics logs and the tokenizer-train / train / eval /
//! compare / synth commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod metrics;

use std::path::Path;

/// Failures, split by the exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<antlm_core::Error> for CliError {
    fn from(e: antlm_core::Error) -> Self {
        match e {
            antlm_core::Error::Config(msg) => Self::Config(msg),
            antlm_core::Error::Parse { .. } | antlm_core::Error::EpochRange { .. } => {
                Self::Config(e.to_string())
            }
            other => Self::Runtime(other.to_string()),
        }
    }
}
