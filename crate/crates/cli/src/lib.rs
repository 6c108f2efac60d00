//! Library side of the `firelab` command-line tool.
//!
//! Each subcommand takes a validated [`RunConfig`] plus an output directory
//! and writes plain files there. Exit codes: 0 on success, 1 when a
//! verification or training run fails (or a file cannot be written), 2 when
//! the configuration is invalid.

mod commands;
pub mod config;

use std::path::PathBuf;

pub use commands::{cmd_bench, cmd_bias, cmd_eval, cmd_train, cmd_verify, run, Command, Outcome};
pub use config::{Precision, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Failure(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failure(_) | CliError::Io { .. } => 1,
        }
    }
}

impl From<fire_core::Error> for CliError {
    fn from(e: fire_core::Error) -> Self {
        use fire_core::Error as E;
        match e {
            E::TrainingDiverged { .. } => CliError::Failure(e.to_string()),
            E::Io { path, source } => CliError::Io { path, source },
            other => CliError::Config(other.to_string()),
        }
    }
}
