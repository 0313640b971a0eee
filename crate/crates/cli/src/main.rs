use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedsim_cli::{run, Command, RunConfig, EXIT_ERROR};

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Sign-quantized federated learning over fading uplinks"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Common {
    /// Flat JSON config with dotted keys; missing keys take defaults.
    #[arg(long)]
    config: PathBuf,
    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Parent directory for result directories.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Concurrent runs for sweep.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Sub {
    /// Minimum-energy plan per worker for a fixed outage target and deadline.
    SolveEnergy(Common),
    /// Round deadline maximizing the convergence proxy under energy budgets.
    SolvePerf(Common),
    /// One training run on MNIST.
    Train(Common),
    /// Pass/fail table of the probability and channel properties.
    Analyze(Common),
    /// Grids of training runs and plot data.
    Sweep(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::SolveEnergy(a) => (Command::SolveEnergy, a),
        Sub::SolvePerf(a) => (Command::SolvePerf, a),
        Sub::Train(a) => (Command::Train, a),
        Sub::Analyze(a) => (Command::Analyze, a),
        Sub::Sweep(a) => (Command::Sweep, a),
    };
    let result = RunConfig::from_path(&args.config).and_then(|mut cfg| {
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        run(command, &cfg, &args.out, args.jobs)
    });
    match result {
        Ok(outcome) => {
            println!("{}", outcome.message);
            println!("results in {}", outcome.dir.display());
            ExitCode::from(outcome.exit_code)
        }
        Err(e) => {
            eprintln!("fedsim {}: {e}", command.name());
            ExitCode::from(EXIT_ERROR)
        }
    }
}
