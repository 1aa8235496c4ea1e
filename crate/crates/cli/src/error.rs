use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_SOLVER: u8 = 2;
pub const EXIT_CONFIG: u8 = 64;
pub const EXIT_INPUT: u8 = 65;
pub const EXIT_OUTPUT: u8 = 74;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input data error: {0}")]
    Input(String),
    #[error("solver aborted: {0}")]
    Solver(String),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Output { .. } => EXIT_OUTPUT,
        }
    }
}
