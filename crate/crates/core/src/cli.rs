//! Command-line front end: generate, train, eval, classify, bench, curves.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::dataset::{self, RangeKind, SplitFractions};
use crate::eval;
use crate::mlp::{self, TrainConfig};
use crate::persist;
use crate::train;
use crate::{Error, Result};

pub const SEED_ENV: &str = "PAMICNET_SEED";

#[derive(Debug, Parser)]
#[command(name = "pamicnet", version, about = "Microphone type classification from frequency response sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize and normalize the labelled dataset (CSV plus JSON sidecar).
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        /// Output CSV path.
        #[arg(long, default_value = "dataset.csv")]
        out: PathBuf,
    },
    /// Split a dataset, train the network, write checkpoint and history.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "dataset.csv")]
        dataset: PathBuf,
        /// Output directory for the checkpoint and history.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Checkpoint path; defaults to `<out>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Record per-epoch wall time in the history file.
        #[arg(long)]
        timing: bool,
    },
    /// Report split accuracies (with --dataset) and off-grid test results.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "run/checkpoint.json")]
        checkpoint: PathBuf,
        /// Dataset to re-split and score; the split uses the same seed as training.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Classify one raw sweep CSV (`frequency_hz,amplitude,phase_rad`).
    Classify {
        #[arg(long, default_value = "run/checkpoint.json")]
        checkpoint: PathBuf,
        sweep: PathBuf,
    },
    /// Single-record inference latency.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "run/checkpoint.json")]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = eval::LATENCY_REPS)]
        reps: usize,
    },
    /// Amplitude and phase curves for plotting, ten per class.
    Curves {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "curves.csv")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_range)]
    pub range: Option<RangeKind>,
    /// JSON file with any of: seed, range, epochs, learning_rate, batch_size.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_range(s: &str) -> std::result::Result<RangeKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Optional settings read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub range: Option<RangeKind>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
}

/// Settings after applying flags, config file, environment and defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub range: RangeKind,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn resolve(common: &CommonArgs, env_seed: Option<&str>) -> Result<Self> {
        let file = match &common.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str::<ConfigFile>(&text)
                    .map_err(|e| Error::Config(format!("config {}: {e}", p.display())))?
            }
            None => ConfigFile::default(),
        };
        let env = env_seed
            .map(|s| s.trim().parse::<u64>().map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not a seed"))))
            .transpose()?;
        let defaults = TrainConfig::default();
        let seed = common.seed.or(file.seed).or(env).unwrap_or(defaults.seed);
        let train = TrainConfig {
            epochs: file.epochs.unwrap_or(defaults.epochs),
            learning_rate: file.learning_rate.unwrap_or(defaults.learning_rate),
            batch_size: file.batch_size.unwrap_or(defaults.batch_size),
            seed,
            ..defaults
        };
        Ok(RunConfig { seed, range: common.range.or(file.range).unwrap_or(RangeKind::Full), train })
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let env_seed = std::env::var(SEED_ENV).ok();
    dispatch_with_env(argv, env_seed.as_deref())
}

pub fn dispatch_with_env<I, T>(argv: I, env_seed: Option<&str>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(cli.command, env_seed, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} not found", p.display()))))
    }
}

fn prepare_output(p: &Path) -> Result<()> {
    match p.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(Error::from),
        _ => Ok(()),
    }
}

pub fn run(cmd: Command, env_seed: Option<&str>, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Generate { common, out: path } => {
            let cfg = RunConfig::resolve(&common, env_seed)?;
            prepare_output(&path)?;
            let d = dataset::training_dataset(cfg.range)?;
            persist::save_dataset(&d, &path, &dataset::default_grid_specs(), Some(cfg.seed))?;
            writeln!(out, "wrote {} records with {} features to {}", d.len(), d.n_features(), path.display())?;
        }
        Command::Train { common, dataset: data, out: dir, checkpoint, epochs, lr, batch_size, timing } => {
            let mut cfg = RunConfig::resolve(&common, env_seed)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(l) = lr {
                cfg.train.learning_rate = l;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            cfg.train.validate()?;
            require_file(&data)?;
            let ckpt = checkpoint.unwrap_or_else(|| dir.join("checkpoint.json"));
            let hist = dir.join("history.csv");
            fs::create_dir_all(&dir)?;
            prepare_output(&ckpt)?;

            let d = persist::load_dataset(&data)?;
            let splits = dataset::shuffle_split(&d, cfg.seed, SplitFractions::default())?;
            drop(d);
            let (model, history) = train::train_with(&splits, &cfg.train, |m| {
                eprintln!(
                    "epoch {:>3}  train loss {:.6} acc {:.5}  dev loss {:.6} acc {:.5}  {:.1}s",
                    m.epoch, m.train_loss, m.train_acc, m.dev_loss, m.dev_acc, m.seconds
                );
            })?;
            train::save_checkpoint(&model, &history, &ckpt)?;
            train::save_history(&history, timing, &hist)?;
            let f = &history.final_metrics;
            writeln!(
                out,
                "train {:.5}  dev {:.5}  test {:.5}\ncheckpoint {}\nhistory {}",
                f.train_acc,
                f.dev_acc,
                f.test_acc,
                ckpt.display(),
                hist.display()
            )?;
        }
        Command::Eval { common, checkpoint, dataset: data, json } => {
            let cfg = RunConfig::resolve(&common, env_seed)?;
            require_file(&checkpoint)?;
            if let Some(p) = &data {
                require_file(p)?;
            }
            let (model, _) = train::load_checkpoint(&checkpoint)?;
            let split_report = match &data {
                Some(p) => {
                    let d = persist::load_dataset(p)?;
                    if d.n_features() != model.n_inputs() || d.norm != model.norm {
                        return Err(Error::Schema("dataset does not match the checkpoint".into()));
                    }
                    let s = dataset::shuffle_split(&d, cfg.seed, SplitFractions::default())?;
                    Some(SplitReport {
                        train_acc: eval::accuracy(&model, &s.train)?,
                        dev_acc: eval::accuracy(&model, &s.dev)?,
                        test_acc: eval::accuracy(&model, &s.test)?,
                        test_confusion: eval::confusion(&model, &s.test)?,
                    })
                }
                None => None,
            };
            let offgrid = eval::run_offgrid_tests(&model, cfg.seed)?;
            if json {
                let v = serde_json::json!({ "splits": split_report, "offgrid": offgrid });
                writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
            } else {
                if let Some(r) = &split_report {
                    writeln!(
                        out,
                        "Features {}  accuracy train {:.3}%, dev {:.3}%, test {:.3}%\n{}",
                        model.n_inputs(),
                        100.0 * r.train_acc,
                        100.0 * r.dev_acc,
                        100.0 * r.test_acc,
                        r.test_confusion.to_text()
                    )?;
                }
                write!(out, "{}", offgrid.to_text())?;
            }
        }
        Command::Classify { checkpoint, sweep } => {
            require_file(&checkpoint)?;
            require_file(&sweep)?;
            let (model, _) = train::load_checkpoint(&checkpoint)?;
            let s = persist::read_sweep(BufReader::new(File::open(&sweep)?))?;
            let grid = model.grid.as_ref().ok_or_else(|| Error::Schema("checkpoint has no grid".into()))?;
            let norm = model.norm.as_ref().ok_or_else(|| Error::Schema("checkpoint has no normalization".into()))?;
            let mut x = s.features_for(grid)?;
            norm.apply(&mut x)?;
            let (class, probs) = mlp::predict(&model, &x)?;
            writeln!(out, "label {} ({})", class.index(), class.name())?;
            writeln!(out, "probabilities {:.6} {:.6} {:.6}", probs[0], probs[1], probs[2])?;
        }
        Command::Bench { common, checkpoint, reps } => {
            let cfg = RunConfig::resolve(&common, env_seed)?;
            require_file(&checkpoint)?;
            if reps == 0 {
                return Err(Error::Config("--reps must be positive".into()));
            }
            let (model, _) = train::load_checkpoint(&checkpoint)?;
            let specs = dataset::default_grid_specs();
            let params = dataset::offgrid_params(&specs, cfg.seed, 1);
            let grid = model.grid.clone().ok_or_else(|| Error::Schema("checkpoint has no grid".into()))?;
            let norm = model.norm.as_ref().ok_or_else(|| Error::Schema("checkpoint has no normalization".into()))?;
            let (a, ph) = crate::response::amplitude_phase_sweep(&params[0].1, &grid)?;
            let mut x: Vec<f64> = a.into_iter().chain(ph).collect();
            norm.apply(&mut x)?;
            let predict = eval::predict_latency(&model, &x, reps)?;
            let e2e = eval::end_to_end_latency(&model, &params[0].1, reps)?;
            let v = serde_json::json!({ "predict": predict, "end_to_end": e2e });
            writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
        }
        Command::Curves { common, out: path } => {
            let cfg = RunConfig::resolve(&common, env_seed)?;
            prepare_output(&path)?;
            let rows = eval::emit_curves(&dataset::default_grid_specs(), &cfg.range.grid(), &path)?;
            writeln!(out, "wrote {rows} rows to {}", path.display())?;
        }
    }
    Ok(())
}

#[derive(Debug, serde::Serialize)]
struct SplitReport {
    train_acc: f64,
    dev_acc: f64,
    test_acc: f64,
    test_confusion: eval::ConfusionMatrix,
}
