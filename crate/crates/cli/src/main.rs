mod commands;
mod settings;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

/// Conditional flows, interaction fields and their duality on small exact instances.
///
/// Every command accepts `--config FILE` with flat `key = value` lines; flags
/// override file values. Exit codes: 0 success, 1 configuration or usage
/// error, 2 a check failed.
#[derive(Parser, Debug)]
#[command(name = "flowfield", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Flow -> field -> flow roundtrip errors at random probes, as JSON.
    VerifyDuality(commands::duality::Args),
    /// Monte-Carlo flux through slices t = const, as CSV `t,flux,stderr`.
    Flux(commands::flux::Args),
    /// Transport particles with the exact velocity and score them against fresh target draws.
    Generate(commands::generate::Args),
    /// Weight concentration of the multi-sample estimator versus batch size.
    Gini(commands::gini::Args),
    /// Fit a small network to a flow-matching or normalized-field objective.
    Train(commands::train::Args),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::VerifyDuality(a) => commands::duality::run(a),
        Command::Flux(a) => commands::flux::run(a),
        Command::Generate(a) => commands::generate::run(a),
        Command::Gini(a) => commands::gini::run(a),
        Command::Train(a) => commands::train::run(a),
    };
    match result {
        Ok(commands::Status::Pass) => ExitCode::SUCCESS,
        Ok(commands::Status::Fail(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
