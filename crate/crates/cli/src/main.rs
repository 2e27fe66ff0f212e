use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Stochastic recursive variance-reduced cubic regularization.
#[derive(Parser)]
#[command(name = "srvrc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config; writes trace.csv and summary.json.
    Run { config: PathBuf },
    /// Check gradients and Hessian-vector products of the configured problem.
    Check { config: PathBuf },
    /// Run every *.json config in a directory and write comparison.csv.
    Compare { dir: PathBuf },
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Run { config } => srvrc_cli::cmd_run(&config),
        Command::Check { config } => srvrc_cli::cmd_check(&config),
        Command::Compare { dir } => srvrc_cli::cmd_compare(&dir),
    };
    ExitCode::from(code as u8)
}
