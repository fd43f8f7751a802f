//! `stochreach`: config-driven front end for the reach-set library.
//!
//! Exit codes: 0 success, 1 invalid config or input, 2 empty set (the
//! certificate is still written), 3 solver failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use commands::Outcome;
use config::{example, Prepared, EXAMPLES};

#[derive(Parser)]
#[command(name = "stochreach", version, about = "Stochastic reach sets of linear Gaussian systems")]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Repeat for more log output on standard error.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a ready-to-run config for one of the bundled setups.
    Example {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(EXAMPLES))]
        name: String,
        /// Destination; defaults to `<name>.json`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compute the reach set for every configured threshold.
    Compute { config: PathBuf },
    /// Interpolate two computed sets at a new threshold.
    Interpolate {
        config: PathBuf,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        alpha1: Option<f64>,
        #[arg(long)]
        alpha2: Option<f64>,
    },
    /// Grid dynamic programming baseline.
    Dp { config: PathBuf },
    /// Monte Carlo check of every vertex of the computed sets.
    Validate { config: PathBuf },
    /// Summarize the artifacts in the output directory.
    Report { config: PathBuf },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<stochreach::Error>() {
            return match e {
                stochreach::Error::Solver(_) | stochreach::Error::ResourceExhausted(_) => 3,
                _ => 1,
            };
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    // Monte Carlo runs on the global pool; the direction searches build their own.
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .context("starting the worker pool")?;
    match cli.command {
        Command::Example { name, output } => {
            let cfg = example(&name).expect("names are checked by the parser");
            let path = output.unwrap_or_else(|| PathBuf::from(format!("{name}.json")));
            let text = serde_json::to_string_pretty(&cfg)? + "\n";
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            println!("{}", path.display());
            Ok(Outcome::Done)
        }
        Command::Compute { config } => commands::compute(&Prepared::load(&config)?, jobs),
        Command::Interpolate {
            config,
            beta,
            alpha1,
            alpha2,
        } => commands::interpolate(&Prepared::load(&config)?, beta, alpha1, alpha2),
        Command::Dp { config } => commands::dp(&Prepared::load(&config)?),
        Command::Validate { config } => commands::validate(&Prepared::load(&config)?),
        Command::Report { config } => commands::report(&Prepared::load(&config)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Empty) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
