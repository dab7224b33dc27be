use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use formkit_cli::commands::{self, SimOverrides};

/// Distributed formation-control toolkit: synthesize per-edge gains, fly them
/// in a deterministic simulator, and verify stability certificates.
#[derive(Parser)]
#[command(name = "formkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize gains for a scenario's formation and write a gains file.
    Synth {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Output gains file.
        #[arg(long, default_value = "gains.txt")]
        out: PathBuf,
    },
    /// Simulate a scenario and write trajectory.csv plus metrics.json.
    ///
    /// Exit codes: 0 converged, 1 error, 2 time horizon, 3 gridlock.
    Sim {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Output directory for run artifacts.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the integrator step, seconds.
        #[arg(long)]
        dt: Option<f64>,
        /// Override the time horizon, seconds.
        #[arg(long)]
        tmax: Option<f64>,
        /// Run this many copies with derived seeds (seed, seed+1, ...), each
        /// in its own subdirectory; exit 0 iff all converge.
        #[arg(long)]
        sweep: Option<usize>,
    },
    /// Verify a gains file against a scenario's formation.
    Verify {
        /// Gains file.
        gains: PathBuf,
        /// Scenario TOML file.
        scenario: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth { scenario, out } => commands::cmd_synth(&scenario, &out),
        Command::Sim {
            scenario,
            out,
            seed,
            dt,
            tmax,
            sweep,
        } => commands::cmd_sim(
            &scenario,
            &out,
            &SimOverrides {
                seed,
                dt,
                t_max: tmax,
                sweep,
            },
        ),
        Command::Verify { gains, scenario } => commands::cmd_verify(&gains, &scenario),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::EXIT_FAIL)
        }
    }
}
