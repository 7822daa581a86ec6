//! `ctgp` experiment driver: simulate, train, estimate, evaluate, reproduce.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "ctgp", version, about = "Simulated 1D inertial study of GP preintegration")]
struct Cli {
    /// Override the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap the number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample training and evaluation trajectories with measurements.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn the input variance and the Singer parameters from training data.
    Train {
        /// Defaults to the configuration snapshot in the data directory.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both estimators on the evaluation set.
    Estimate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute metrics, summaries and consistency checks.
    Evaluate {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline for a named experiment.
    Reproduce {
        #[arg(value_enum)]
        experiment: Experiment,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a preset configuration as JSON.
    Preset {
        #[arg(value_enum)]
        experiment: Experiment,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Experiment {
    Wnoj,
    Singer,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Experiment::Wnoj => "wnoj",
            Experiment::Singer => "singer",
        }
    }
}

fn exit_code(e: &ctgp::Error) -> u8 {
    match e {
        ctgp::Error::Config(_) => 2,
        e if e.is_numerical() => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let ctx = commands::Context { seed: cli.seed, quiet: cli.quiet };
    let result = match cli.command {
        Command::Simulate { config, out } => commands::simulate(&ctx, &config, &out),
        Command::Train { config, data, out } => commands::train(&ctx, config.as_deref(), &data, &out),
        Command::Estimate { config, data, params, out } => {
            commands::estimate(&ctx, config.as_deref(), &data, &params, &out)
        }
        Command::Evaluate { results, truth, out } => commands::evaluate(&ctx, &results, &truth, &out),
        Command::Reproduce { experiment, out } => commands::reproduce(&ctx, experiment.name(), &out),
        Command::Preset { experiment } => {
            ctgp::config::ExperimentConfig::preset(experiment.name()).map(|c| println!("{}", c.to_json()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
