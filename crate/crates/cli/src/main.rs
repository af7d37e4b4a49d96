//! Command-line front end: parses a run configuration, executes one
//! subcommand into an output directory, and maps the outcome onto the exit
//! code contract (0 pass, 2 audit failure, 3 solver failure, 4 config
//! error).

use chns_core::config::parse_config;
use chns_core::runner::{execute, exit_code_for, Subcommand};
use clap::{Parser, Subcommand as ClapSubcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "chns",
    about = "Two-phase-flow optimal control: energy-certified forward solves, \
             adjoint gradients, and Yosida-parameter continuation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Run the forward model with zero control and write field snapshots.
    Simulate(RunArgs),
    /// Forward run plus conservation and energy-estimate audits.
    Energycheck(RunArgs),
    /// Adjoint reduced gradient against finite differences.
    Gradcheck(RunArgs),
    /// Projected-gradient optimal control at the first Yosida stage.
    Optimize(RunArgs),
    /// Full Yosida continuation with stationarity reporting.
    Continue(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run configuration (TOML); omit for the built-in defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory for CSVs and the manifest.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

fn run(sub: Subcommand, args: &RunArgs) -> ExitCode {
    let config_text = match &args.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read config {}: {e}", path.display());
                return ExitCode::from(4);
            }
        },
        None => String::new(),
    };
    let cfg = match parse_config(&config_text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    };
    let result = execute(sub, &cfg, &config_text, &args.out);
    match &result {
        Ok(out) if out.pass => {
            println!("{}: PASS", sub.name());
            for (k, v) in &out.metrics {
                println!("  {k} = {v:.6e}");
            }
        }
        Ok(out) => {
            println!(
                "{}: FAIL {}",
                sub.name(),
                out.failure_reason.as_deref().unwrap_or("audit failed")
            );
        }
        Err(e) => {
            eprintln!("error: {e}");
        }
    }
    ExitCode::from(exit_code_for(&result) as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate(a) => run(Subcommand::Simulate, a),
        Command::Energycheck(a) => run(Subcommand::EnergyCheck, a),
        Command::Gradcheck(a) => run(Subcommand::GradCheck, a),
        Command::Optimize(a) => run(Subcommand::Optimize, a),
        Command::Continue(a) => run(Subcommand::Continue, a),
    }
}
