//! `lsvlab`: runs one experiment per configuration file and writes its data.

mod config;
mod output;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use lsvlab::ensemble::Workers;
use lsvlab::LabError;

use config::{validate, ExperimentConfig};
use output::OutputDir;

/// Overrides `out` from the config, itself overridden by `--out`.
const OUT_ENV: &str = "LSVLAB_OUT";

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_CENSORING: u8 = 4;

#[derive(Parser)]
#[command(name = "lsvlab", version, about = "Experiments on random compositions of intermittent maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run(RunArgs),
    /// Check a config file and list every problem found.
    Validate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn exit_code(e: &LabError) -> u8 {
    match e {
        LabError::Domain(_) | LabError::Config(_) | LabError::GridMismatch(_) => EXIT_CONFIG,
        LabError::NonConvergence { .. } | LabError::Quadrature { .. } | LabError::MassDefect { .. } => EXIT_NUMERICAL,
        LabError::ExcessCensoring { .. } => EXIT_CENSORING,
        _ => EXIT_OTHER,
    }
}

/// Loads the config, applies `--seed` and reports diagnostics; `None` means
/// it is not runnable.
fn load_checked(args: &CommonArgs) -> Option<ExperimentConfig> {
    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config: {e}");
            return None;
        }
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    let diagnostics = validate(&cfg);
    for d in &diagnostics {
        eprintln!("{d}");
    }
    diagnostics.is_empty().then_some(cfg)
}

fn output_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("lsvlab-out").join(cfg.kind.name()))
}

fn run(args: &RunArgs) -> ExitCode {
    let Some(cfg) = load_checked(&args.common) else {
        return ExitCode::from(EXIT_CONFIG);
    };
    if args.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(args.workers).build_global() {
            eprintln!("cannot start {} workers: {e}", args.workers);
            return ExitCode::from(EXIT_OTHER);
        }
    }
    let workers = if args.workers == 1 { Workers::single() } else { Workers::AUTO };
    let dir = output_dir(args.out.as_deref(), &cfg);
    let started = Instant::now();
    let result = OutputDir::create(&dir, &cfg).and_then(|mut out| {
        let outcome = run::execute(&cfg, workers, &mut out)?;
        let manifest = out.finish(cfg.clone(), args.workers, started.elapsed().as_secs_f64())?;
        Ok((outcome, manifest))
    });
    match result {
        Ok((outcome, manifest)) => {
            println!(
                "{} outputs in {} ({:.1} s)",
                manifest.outputs.len(),
                dir.display(),
                manifest.wall_clock_seconds
            );
            if outcome.excess_censoring {
                eprintln!("excess censoring: raise sizes.cap");
                return ExitCode::from(EXIT_CENSORING);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(args) => run(args),
        Command::Validate(args) => match load_checked(args) {
            Some(_) => {
                println!("ok");
                ExitCode::SUCCESS
            }
            None => ExitCode::from(EXIT_CONFIG),
        },
    }
}
