//! `advar`: runs sampling, exit-time, rate-bound and Fokker–Planck experiments
//! from presets or JSON configs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use advar_core::config::{ConfigMap, ExperimentConfig};
use advar_core::experiment::{run_exit, run_fpe, run_rates, run_sample, with_threads};
use advar_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "advar", version, about = "Adaptive-diffusion Gibbs sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate particle ensembles and score them against the Gibbs density.
    Sample(Common),
    /// Mean exit times by quadrature, asymptotics and Monte Carlo over an eps grid.
    Exit(Common),
    /// Theoretical convergence-rate bounds, optionally with fitted FPE rates.
    Rates(Common),
    /// Deterministic Fokker–Planck solves.
    Fpe(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file (nested objects or dotted keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in bundle: dw1d, multimodal2d or exit_fig6.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Use the full-size settings of a preset.
    #[arg(long)]
    paper_scale: bool,
    /// Override a config key, e.g. `--set eps=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn resolve(args: &Common) -> Result<ExperimentConfig, Error> {
    let file = args.config.as_deref().map(ConfigMap::from_file).transpose()?;
    let mut overrides = ConfigMap::default();
    for s in &args.sets {
        overrides.set_assignment(s)?;
    }
    if let Some(seed) = args.seed {
        overrides.set("seed", seed.into());
    }
    ExperimentConfig::resolve(args.preset.as_deref(), args.paper_scale, file.as_ref(), &overrides)
}

type Runner = fn(&ExperimentConfig, &Path) -> Result<(), Error>;

fn run(cli: Cli) -> Result<(), Error> {
    let (args, runner): (&Common, Runner) = match &cli.command {
        Command::Sample(a) => (a, |c, o| run_sample(c, o).map(drop)),
        Command::Exit(a) => (a, |c, o| run_exit(c, o).map(drop)),
        Command::Rates(a) => (a, |c, o| run_rates(c, o).map(drop)),
        Command::Fpe(a) => (a, |c, o| run_fpe(c, o).map(drop)),
    };
    let cfg = resolve(args)?;
    log::info!("writing results to {}", args.out.display());
    with_threads(args.threads, || runner(&cfg, &args.out))?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    // Only 0, 2 and 3 are valid exit codes, so a panic counts as a numerical failure.
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
        Err(_) => ExitCode::from(3),
    }
}
