//! Batch front end for the `mfamd` library: preprocess, simulate, fit,
//! select and diagnose, each driven by one TOML run configuration.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};

pub mod commands;
pub mod config;
pub mod manifest;

pub use config::{Overrides, Resolved, RunConfig};
pub use manifest::RunManifest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Model(#[from] mfamd::Error),

    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Preprocess,
    Simulate,
    Fit,
    Select,
    Diagnose,
}

/// Resolves the configuration (file, then environment, then `cli`) and runs
/// one command.
pub fn run(command: Command, config_path: Option<&Path>, cli: Overrides) -> Result<RunManifest, CliError> {
    let file = match config_path {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    let resolved = file.resolve(cli.over(Overrides::from_env()?))?;
    match command {
        Command::Preprocess => commands::preprocess(&resolved),
        Command::Simulate => commands::simulate(&resolved),
        Command::Fit => commands::fit(&resolved),
        Command::Select => commands::select(&resolved),
        Command::Diagnose => commands::diagnose(&resolved),
    }
}
