//! Command-line front end for `qtomo`.
//!
//! Every subcommand resolves its flags into a [`config::CommandConfig`], so a
//! run can be repeated from the `config.json` it leaves behind with
//! `qtomo run config.json`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod commands;
pub mod config;
pub mod output;

use std::path::Path;

pub use commands::{execute, Outcome};
pub use config::CommandConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<qtomo::Error> for CliError {
    fn from(e: qtomo::Error) -> Self {
        use qtomo::Error as E;
        match e {
            E::UnphysicalState { .. }
            | E::DegenerateAxis
            | E::PureStateDegeneracy { .. }
            | E::InvalidParameter(_)
            | E::InvalidDensityMatrix(_)
            | E::InvalidPovm(_)
            | E::GroupTooLarge { .. }
            | E::Format(_)
            | E::Json(_) => CliError::Config(e.to_string()),
            E::Io(io) => CliError::Io(io),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

/// Runs a command and writes its artifacts plus a manifest into `out_dir`.
pub fn run_to_dir(config: &CommandConfig, out_dir: &Path) -> Result<Outcome, CliError> {
    let started = output::unix_ms();
    let outcome = execute(config)?;
    output::persist(out_dir, config, &outcome.artifacts, started)?;
    Ok(outcome)
}

/// Configures the global rayon pool from `QTOMO_THREADS`, if set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("QTOMO_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("QTOMO_THREADS must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(CliError::Config("QTOMO_THREADS must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot configure thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    log::info!("built without the parallel feature; QTOMO_THREADS={n} ignored");
    Ok(())
}
