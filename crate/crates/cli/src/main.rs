mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::{Context, Failure};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "iscm", version, about = "Inclusive synthetic control estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Random seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Unrestricted and restricted fits for every system unit.
    Fit,
    /// Restricted-vs-unrestricted comparison and recommendation.
    Compare,
    /// Full estimation: fits, Omega, invertibility, effects.
    Iscm,
    /// In-space (and optionally in-time) placebo tests.
    Placebo,
    /// Simulated panel with known truth, optionally a recovery experiment.
    Simulate,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let path = cli.config.ok_or_else(|| Failure::Input("--config is required".into()))?;
    let mut config = RunConfig::from_path(&path)?;
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Input("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Input(e.to_string()))?;
    }
    let output = cli
        .output
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("iscm-output"));
    let ctx = Context { config, output };
    match cli.command {
        Command::Fit => commands::fit(&ctx),
        Command::Compare => commands::compare(&ctx),
        Command::Iscm => commands::iscm(&ctx),
        Command::Placebo => commands::placebo(&ctx),
        Command::Simulate => commands::simulate(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
