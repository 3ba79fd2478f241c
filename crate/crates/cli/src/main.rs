//! `hcpanel`: fit, predict, simulate and Monte Carlo for heterogeneous
//! panel models.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

mod commands;
mod config;
mod error;
mod model_file;
mod panel_io;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{CliResult, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "hcpanel", version, about = "Nonparametric empirical Bayes for heterogeneous panels")]
struct Cli {
    /// Log verbosity (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the prior and write g_hat.json, estimates.csv, trace.csv
    Fit(commands::FitArgs),
    /// Posterior means and MLEs under a saved model
    Estimate(commands::EstimateArgs),
    /// One-step-ahead predictions
    Predict(commands::PredictArgs),
    /// Simulate a panel and its ground truth
    Simulate(commands::SimulateArgs),
    /// Monte Carlo study of a simulation design
    Mc(commands::McArgs),
    /// Identification round trips for the closed-form constructions
    Identify(commands::IdentifyArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Mc(a) => commands::mc(a),
        Command::Identify(a) => commands::identify(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
