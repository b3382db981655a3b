use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use feddrop::commands;
use feddrop::config::RunConfig;
use feddrop::exec::ThreadPoolExecutor;

/// Federated dropout simulator.
#[derive(Parser)]
#[command(name = "feddrop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic federated dataset from `[data.generator]`.
    GenerateData(Common),
    /// Train from scratch with federated dropout.
    Train(Common),
    /// Pretrain without one domain, then adapt to it federatedly.
    Adapt(Common),
    /// Rank blocks by ambience and assign per-block dropout rates.
    Ablate(Common),
    /// Evaluate sub-models sampled from a checkpoint.
    Submodels(Common),
    /// Client-model size reductions for an FF share and rate ladder.
    SizeReport(Common),
}

#[derive(Args)]
struct Common {
    /// Run config (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; defaults to the config's `out_dir`, then `.`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> feddrop::Result<(RunConfig, PathBuf)> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.override_seed(seed);
        }
        let out = self.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
        Ok((cfg, out))
    }
}

fn run(cli: Cli) -> feddrop::Result<()> {
    let written = match cli.command {
        Command::GenerateData(c) => {
            let (cfg, out) = c.load()?;
            vec![commands::generate_data(&cfg, &out)?]
        }
        Command::Train(c) => {
            let (cfg, out) = c.load()?;
            commands::train(&cfg, &out, &ThreadPoolExecutor::from_env()?)?
        }
        Command::Adapt(c) => {
            let (cfg, out) = c.load()?;
            commands::adapt(&cfg, &out, &ThreadPoolExecutor::from_env()?)?
        }
        Command::Ablate(c) => {
            let (cfg, out) = c.load()?;
            vec![commands::ablate(&cfg, &out)?]
        }
        Command::Submodels(c) => {
            let (cfg, out) = c.load()?;
            vec![commands::submodels(&cfg, &out)?]
        }
        Command::SizeReport(c) => {
            let (cfg, out) = c.load()?;
            vec![commands::size_report(&cfg, &out)?]
        }
    };
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
