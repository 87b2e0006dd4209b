//! `gal` — geometry-aware layer-wise training runs from the command line.
//!
//! Subcommands: `train`, `evaluate`, `attack`, `analyze`, `sweep`,
//! `fetch-data`. Every artifact-producing run writes a `manifest.json`
//! capturing the resolved config, seed, and software version, so a run can
//! be reproduced exactly. Exit codes: 0 success, 2 config error, 3 data
//! error, 4 state error, 5 numeric abort, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gal_core::adversarial::AttackKind;
use gal_core::{Error, Result};

mod commands;
mod config;
mod manifest;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "gal", version, about = "Geometry-aware layer-wise training, attacks, and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model (layer-wise by default, end-to-end via [train] method).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override [train] seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override [output] dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer test accuracy of a trained checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Hidden-layer index (0 = first hidden layer); all probed layers when omitted.
        #[arg(long)]
        layer: Option<usize>,
    },
    /// FGSM / Gaussian robustness sweep over attack strengths.
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// fgsm, gaussian, or all.
        #[arg(long, default_value = "all")]
        kind: String,
        /// Comma-separated override of [attack] eps.
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Representation diagnostics on a trained checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// energy, spectrum, or export.
        #[arg(long)]
        mode: String,
        /// Hidden-layer override (0-based).
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrain one layer over an (alpha, beta) grid and report accuracies.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Download and verify the standard dataset files.
    FetchData {
        /// Destination directory.
        #[arg(long, default_value = "data/mnist")]
        out: PathBuf,
        /// Custom manifest: one '<url> <sha256>' per line.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

fn parse_eps_list(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("--eps '{s}': {e}")))
        })
        .collect()
}

fn load_config(path: &std::path::Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let cfg = load_config(&config, seed, out)?;
            commands::cmd_train(&cfg)
        }
        Command::Evaluate {
            checkpoint,
            config,
            layer,
        } => {
            let cfg = load_config(&config, None, None)?;
            commands::cmd_evaluate(&cfg, &checkpoint, layer)
        }
        Command::Attack {
            checkpoint,
            config,
            kind,
            eps,
            seed,
            out,
        } => {
            let cfg = load_config(&config, seed, out)?;
            let kinds: Vec<AttackKind> = match kind.as_str() {
                "all" => vec![AttackKind::Fgsm, AttackKind::Gaussian],
                other => vec![other.parse()?],
            };
            let eps = match eps {
                Some(raw) => parse_eps_list(&raw)?,
                None => cfg.attack.eps.clone(),
            };
            commands::cmd_attack(&cfg, &checkpoint, &kinds, &eps, cfg.train.seed)
        }
        Command::Analyze {
            checkpoint,
            config,
            mode,
            layer,
            out,
        } => {
            let cfg = load_config(&config, None, out)?;
            commands::cmd_analyze(&cfg, &checkpoint, &mode, layer)
        }
        Command::Sweep { config, seed, out } => {
            let cfg = load_config(&config, seed, out)?;
            commands::cmd_sweep(&cfg)
        }
        Command::FetchData { out, manifest } => {
            commands::cmd_fetch_data(&out, manifest.as_deref())
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Parse { .. }
        | Error::Data(_)
        | Error::Integrity { .. }
        | Error::Transport(_)
        | Error::Format { .. } => 3,
        Error::State(_) | Error::Index { .. } => 4,
        Error::Numeric(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    // GAL_THREADS caps the worker pool (rayon's own RAYON_NUM_THREADS works too).
    if let Ok(raw) = std::env::var("GAL_THREADS") {
        if let Ok(n) = raw.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
