//! `chv`: simulate, reconstruct and analyze coded-exposure holographic video.

mod commands;
mod config;
mod manifest;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Config;
use manifest::Outputs;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
            CliError::Numerical(m) => write!(f, "numerical abort: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<chv_core::Error> for CliError {
    fn from(e: chv_core::Error) -> Self {
        use chv_core::Error as E;
        match e {
            E::NumericalAbort { .. } => CliError::Numerical(e.to_string()),
            E::Io(_) | E::Image(_) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "chv", version, about = "Compressive holographic video: coded-exposure simulation, reconstruction and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration; every section is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for masks, scenes and noise (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    /// Suppress progress messages.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and validate a mask stack.
    Masks(Common),
    /// Build a scene and simulate its coded hologram capture.
    Simulate(Common),
    /// Back-propagate and/or run TwIST on simulated captures.
    Reconstruct(Common),
    /// Focus profiles, particle detection, tracks and velocities.
    Analyze(Common),
    /// PSNR sweep over subsampling fraction and plane separation.
    Benchmark(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, common) = match &cli.command {
        Command::Masks(c) => ("masks", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Reconstruct(c) => ("reconstruct", c),
        Command::Analyze(c) => ("analyze", c),
        Command::Benchmark(c) => ("benchmark", c),
    };
    let cfg = Config::load(common.config.as_deref())?.resolve(common.seed, common.out.clone());
    let jobs = common.jobs as usize;
    let mut out = Outputs::new(cfg.out_dir(), common.quiet)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| match cli.command {
        Command::Masks(_) => commands::masks(&cfg, &mut out),
        Command::Simulate(_) => commands::simulate(&cfg, &mut out),
        Command::Reconstruct(_) => commands::reconstruct(&cfg, &mut out),
        Command::Analyze(_) => commands::analyze(&cfg, &mut out),
        Command::Benchmark(_) => commands::benchmark(&cfg, &mut out, jobs),
    })?;
    out.finish(name, cfg.seed(), &cfg.canonical())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("chv: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
