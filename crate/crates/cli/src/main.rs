use std::process::ExitCode;

use clap::Parser;
use qtomo_cli::args::Cli;
use qtomo_cli::{configure_threads, run_to_dir, CliError};

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let config = cli.command.into_config()?;
    let outcome = run_to_dir(&config, &cli.out)?;
    print!("{}", outcome.summary);
    log::info!("wrote {} files to {}", outcome.artifacts.len() + 2, cli.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qtomo: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
