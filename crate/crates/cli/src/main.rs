//! `rdtrack`: simulate, detect, train, track and evaluate from the shell.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
//! failure.

mod commands;
mod e2e;
mod manifest;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rdtrack::Error;

use manifest::{DetectorKind, RunManifest};

#[derive(Parser)]
#[command(name = "rdtrack", version, about = "Range-Doppler detection and tracking workbench")]
struct Cli {
    /// Output root.
    #[arg(long, global = true, env = "RDTRACK_OUT", default_value = "rdtrack-out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct SeedArg {
    /// Seed directory to read and write (defaults to the scenario seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate RD frames and truth from a scenario file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's per-sample SNR.
        #[arg(long, allow_hyphen_values = true)]
        snr_db: Option<f64>,
    },
    /// Run a detector over simulated frames.
    Detect {
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long, default_value = "cfar")]
        detector: DetectorKind,
        /// Neural detector weights.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Minimum confidence (neural default 0.5; no filter otherwise).
        #[arg(long)]
        conf_threshold: Option<f64>,
    },
    /// Train the neural detector on simulated 64×64 frames.
    Train {
        /// Optional file with [dataset] and [train] sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track detections.
    Track {
        #[command(flatten)]
        seed: SeedArg,
        /// Keep the measurement covariance fixed.
        #[arg(long)]
        fixed_r: bool,
        /// Associate on position only.
        #[arg(long)]
        position_only: bool,
    },
    /// Score detections and tracks against truth.
    Eval {
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Full pipeline over the seeds of a run manifest.
    E2e {
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::ConfigParse { .. } => 1,
        Error::Numeric(_) | Error::Singular(_) => 3,
        _ => 2,
    }
}

/// Seed directory named by `--seed`, or the only one under `out`.
fn resolve_dir(out: &Path, seed: Option<u64>) -> Result<PathBuf, Error> {
    if let Some(s) = seed {
        return Ok(commands::seed_dir(out, s));
    }
    let found: Vec<PathBuf> = std::fs::read_dir(out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seed-")))
        .collect();
    match found.as_slice() {
        [one] => Ok(one.clone()),
        [] => Err(Error::Config(format!("no seed directory under {}", out.display()))),
        _ => Err(Error::Config(format!("several seed directories under {}; pass --seed", out.display()))),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let out = &cli.out;
    match cli.cmd {
        Cmd::Simulate { config, seed, snr_db } => {
            let dir = commands::simulate(&config, out, seed, snr_db)?;
            println!("{}", dir.display());
        }
        Cmd::Detect {
            seed,
            detector,
            weights,
            conf_threshold,
        } => {
            let dir = resolve_dir(out, seed.seed)?;
            println!("{}", commands::detect(&dir, detector, weights.as_deref(), conf_threshold)?.display());
        }
        Cmd::Train { config, seed } => {
            println!("{}", commands::train(config.as_deref(), out, seed)?.display());
        }
        Cmd::Track {
            seed,
            fixed_r,
            position_only,
        } => {
            let dir = resolve_dir(out, seed.seed)?;
            println!("{}", commands::track(&dir, fixed_r, position_only)?.display());
        }
        Cmd::Eval { seed } => {
            let dir = resolve_dir(out, seed.seed)?;
            println!("{}", commands::eval(&dir)?.display());
        }
        Cmd::E2e { config } => {
            let text = std::fs::read_to_string(&config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let m = RunManifest::parse(&text, base)?;
            // An explicit --out or RDTRACK_OUT wins over the manifest.
            let explicit = std::env::args().any(|a| a == "--out" || a.starts_with("--out="))
                || std::env::var_os("RDTRACK_OUT").is_some();
            let report = e2e::run(&m, explicit.then_some(out.as_path()))?;
            println!("{}", report.out.display());
            for p in [&report.aggregate, &report.ospa_vs_time].into_iter().chain(&report.pd_vs_snr).chain(&report.plots) {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
