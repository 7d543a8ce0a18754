#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde::Serialize;

use crate::config::{parse, BoundCheckConfig, HallwayConfig, KernelConfig, RolloutConfig, SteadyStateConfig};
use crate::error::CliError;
use crate::output::OutputDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Rollout,
    Kernel,
    BoundCheck,
    Hallway,
    SteadyState,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Rollout => "rollout",
            Command::Kernel => "kernel",
            Command::BoundCheck => "bound-check",
            Command::Hallway => "hallway",
            Command::SteadyState => "steady-state",
        }
    }
}

/// Rollouts, kernels and exploration statistics for untrained policies.
#[derive(Debug, Parser)]
#[command(name = "polexp", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Check an existing output directory against its manifest instead of
    /// running.
    #[arg(long)]
    verify: bool,
}

trait Seeded: Serialize {
    fn seed_mut(&mut self) -> &mut u64;
}

macro_rules! seeded {
    ($($t:ty),*) => {$(
        impl Seeded for $t {
            fn seed_mut(&mut self) -> &mut u64 {
                &mut self.seed
            }
        }
    )*};
}
seeded!(RolloutConfig, KernelConfig, BoundCheckConfig, HallwayConfig, SteadyStateConfig);

fn execute<C: Seeded + serde::de::DeserializeOwned>(
    args: &Args,
    text: &str,
    validate: impl Fn(&C) -> Result<(), CliError>,
    run: impl Fn(&C, &mut OutputDir) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let mut cfg: C = parse(text)?;
    if let Some(seed) = args.seed {
        *cfg.seed_mut() = seed;
    }
    validate(&cfg)?;
    let seed = *cfg.seed_mut();
    let hash = polexp_core::config_hash(&(args.command.name(), &cfg));
    if args.verify {
        return verify(&args.out, args.command.name(), hash);
    }
    let mut out = OutputDir::create(&args.out, args.command.name(), hash, seed)?;
    run(&cfg, &mut out)?;
    out.finish()?;
    Ok(())
}

fn verify(dir: &Path, command: &str, hash: u64) -> Result<(), CliError> {
    let problems = output::verify(dir, command, hash)?;
    if problems.is_empty() {
        println!("verified {}", dir.display());
        Ok(())
    } else {
        Err(CliError::Runtime(format!("verification failed:\n  {}", problems.join("\n  "))))
    }
}

fn real_main(args: &Args) -> Result<(), CliError> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    match args.command {
        Command::Rollout => execute(args, &text, RolloutConfig::validate, commands::rollout),
        Command::Kernel => execute(args, &text, KernelConfig::validate, commands::kernel),
        Command::BoundCheck => execute(args, &text, BoundCheckConfig::validate, commands::bound_check),
        Command::Hallway => execute(args, &text, HallwayConfig::validate, commands::hallway),
        Command::SteadyState => execute(args, &text, SteadyStateConfig::validate, commands::steady_state),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match real_main(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("polexp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
