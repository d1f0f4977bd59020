use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use tvbin_core::learn::TrainMode;
use tvbin_core::pipeline::{self, PipelineConfig};
use tvbin_core::synth::{self, Preset};

const USAGE: u8 = 1;
const DATA: u8 = 2;

/// Document binarization with an unrolled primal-dual TV solver.
#[derive(Debug, Parser)]
#[command(name = "tvbin", version)]
struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Binarize one image; ink is written black on white.
    Binarize {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// `key = value` configuration or trained parameter file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = ["bregman", "euclid"])]
        solver: Option<String>,
        #[arg(long, value_parser = ["otsu", "niblack", "sauvola", "mean"])]
        unary: Option<String>,
        /// Light strokes on dark background.
        #[arg(long)]
        invert: bool,
        /// Also write the soft background probability as a gray image.
        #[arg(long)]
        dump_usum: Option<PathBuf>,
        /// Recorded in the configuration; binarization itself draws no
        /// random numbers.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare a directory of results against ground truth.
    Evaluate {
        pred_dir: PathBuf,
        gt_dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Learn step sizes and edge weight from `NNNN_in` / `NNNN_gt` pairs.
    Train {
        dataset_dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Only update the edge weight.
        #[arg(long)]
        pretrain_edge_weight: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic degraded dataset with ground truth and manifest.
    Synth {
        out_dir: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, value_parser = ["mild", "harsh"])]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

/// Runs one command; `Ok` carries the exit status.
fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Binarize { input, output, config, solver, unary, invert, dump_usum, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = solver {
                cfg.solver = s.parse()?;
            }
            if let Some(u) = unary {
                cfg.unary.provider = u.parse()?;
            }
            cfg.invert |= invert;
            if let Some(s) = seed {
                cfg.optim.seed = s;
            }
            cfg.validate()?;
            let out = pipeline::binarize(&input, &output, dump_usum.as_deref(), &cfg)
                .with_context(|| format!("binarizing {}", input.display()))?;
            log::info!(
                "{}: {} of {} pixels foreground",
                input.display(),
                out.labels.foreground_count(),
                out.labels.data().len()
            );
            Ok(0)
        }
        Command::Evaluate { pred_dir, gt_dir, output } => {
            let ev = pipeline::evaluate(&pred_dir, &gt_dir)?;
            let file = File::create(&output).with_context(|| format!("creating {}", output.display()))?;
            let mut w = BufWriter::new(file);
            ev.write_csv(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", output.display()))?;
            eprintln!("{}", ev.summary());
            if ev.missing.is_empty() {
                Ok(0)
            } else {
                eprintln!("{} file(s) without a counterpart: {}", ev.missing.len(), ev.missing.join(", "));
                Ok(DATA)
            }
        }
        Command::Train { dataset_dir, output, config, pretrain_edge_weight, epochs, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(e) = epochs {
                cfg.optim.epochs = e;
            }
            if let Some(s) = seed {
                cfg.optim.seed = s;
            }
            let mode = if pretrain_edge_weight { TrainMode::EdgeWeightOnly } else { TrainMode::Full };
            let outcome = pipeline::train_cmd(&dataset_dir, &output, &cfg, mode)?;
            let best = outcome.history.get(outcome.best_epoch.saturating_sub(1)).copied().unwrap_or(f64::NAN);
            eprintln!("best epoch {} with loss {best:.6}; parameters in {}", outcome.best_epoch, output.display());
            Ok(0)
        }
        Command::Synth { out_dir, count, preset, seed } => {
            if count == 0 {
                bail!(tvbin_core::Error::Config("--count must be positive".into()));
            }
            let preset: Preset = preset.parse()?;
            let entries = synth::generate_dataset(&out_dir, preset, count, seed)?;
            eprintln!("wrote {} {preset} pages to {}", entries.len(), out_dir.display());
            Ok(0)
        }
    }
}

fn exit_status(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<tvbin_core::Error>() {
        Some(e) if !e.is_data_error() => USAGE,
        _ => DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
