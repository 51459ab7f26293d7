//! Command-line front end: generate datasets, train method sequences,
//! re-evaluate checkpoints, and aggregate reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use inerf::config::{load_config, ExperimentConfig, ResolvedConfig};
use inerf::harness;

#[derive(Parser)]
#[command(
    name = "inerf",
    about = "Incremental neural radiance fields on the CPU",
    version
)]
struct Cli {
    /// Worker threads; also settable via INERF_THREADS. Defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Experiment configuration (TOML). Omitted: built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Forces reproducible outputs (wall times zeroed in CSVs).
    #[arg(long)]
    deterministic: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> inerf::Result<ResolvedConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        cfg.resolve()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset to disk.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every configured method over the task sequence.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory (from `generate`).
        #[arg(long)]
        data: PathBuf,
        /// Run output directory (checkpoints + metrics.csv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-evaluate final checkpoints against the dataset.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Run directory holding the checkpoints.
        #[arg(long)]
        run: PathBuf,
    },
    /// Aggregate runs into comparison tables and image grids.
    Report {
        /// Dataset directory all runs must match.
        #[arg(long)]
        data: PathBuf,
        /// Report output directory.
        #[arg(long)]
        out: PathBuf,
        /// Run directories to aggregate.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn thread_count(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| std::env::var("INERF_THREADS").ok()?.parse().ok())
}

fn run(cli: Cli) -> inerf::Result<()> {
    if let Some(n) = thread_count(cli.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| inerf::Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Generate { config, out } => harness::cmd_generate(&config.resolve()?, &out),
        Command::Train { config, data, out } => harness::cmd_train(&config.resolve()?, &data, &out),
        Command::Eval { config, data, run } => harness::cmd_eval(&config.resolve()?, &data, &run),
        Command::Report { data, out, runs } => harness::cmd_report(&runs, &data, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
