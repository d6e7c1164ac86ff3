//! `qsigma`: run the random-walk and mountain-car experiments, parameter
//! sweeps and the randomized operator checks.
//!
//! Exit status is 0 on success, 1 when a checked property fails (or the run
//! itself errors) and 2 on a configuration error.

mod commands;
mod settings;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Failure;
use settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "qsigma", version, about = "Q(sigma, lambda) experiments and property checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML file with the same keys as the flags (kebab-case); flags override it.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,

    #[command(flatten)]
    settings: Settings,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// 19-state random walk prediction for every (trace kind, sigma).
    PredictRandomWalk,
    /// Mountain-car control with tile coding, with optional one-step baselines.
    ControlMountainCar,
    /// Randomized checks of the operator properties; writes a JSON report and a measured-vs-bound CSV.
    VerifyTheory,
    /// Grid over sigma, lambda and alpha on one environment.
    Sweep,
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let settings = match &cli.config {
        Some(path) => Settings::from_file(path).map_err(Failure::Config)?.overridden_by(&cli.settings),
        None => cli.settings.clone(),
    };
    match cli.command {
        Command::PredictRandomWalk => commands::predict_random_walk(&settings),
        Command::ControlMountainCar => commands::control_mountain_car(&settings),
        Command::VerifyTheory => commands::verify(&settings),
        Command::Sweep => commands::sweep(&settings),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on malformed flags.
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Property(msg)) => {
            eprintln!("property failure: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
