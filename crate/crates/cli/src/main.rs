//! `openset`: data generation, training and theory runs from JSON configs.
//!
//! Exit codes: 0 success, 1 failed check or runtime error, 2 usage or
//! configuration error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "openset",
    version,
    about = "Open-set semi-supervised selection lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for parallel scoring and replications.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Only log warnings and errors.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic open-set dataset.
    Synth(Common),
    /// Train on a dataset CSV.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV written by `synth`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the convergence-theory harness.
    Theory(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth(c) | Command::Theory(c) => c,
            Command::Train { common, .. } => common,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = cli.command.common().clone();
    env_logger::Builder::new()
        .filter_level(if common.quiet {
            log::LevelFilter::Warn
        } else {
            log::LevelFilter::Info
        })
        .parse_default_env()
        .format_timestamp(None)
        .init();
    if common.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Synth(c) => commands::synth(c),
        Command::Train { common, data } => commands::train(common, data),
        Command::Theory(c) => commands::theory(c),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
