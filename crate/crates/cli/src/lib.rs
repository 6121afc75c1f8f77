//! `vitray` command line: synthetic data, training, evaluation and plots.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;
use vitray::dataio::{
    default_class_names, generate_synthetic_images, load_directory_dataset, split_dataset,
    split_dataset_stratified, write_class_directories, DataError,
};
use vitray::metrics::{self, MetricsError};
use vitray::rng::{derive_seed, stream};
use vitray::trainer::{
    evaluate, fit, load_checkpoint, load_checkpoint_for, CheckpointError, TrainError,
    BEST_CHECKPOINT, TRAIN_LOG,
};

use config::{RESOLVED_FILE, SEED_ENV};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(TrainError, DataError, CheckpointError, MetricsError);

/// Writes through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    let mut f = std::fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Parser)]
#[command(name = "vitray", version, about = "Vision transformer for grayscale images replicated to three channels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a two-class synthetic dataset as class directories of PNGs.
    Synth(SynthArgs),
    /// Train from scratch with early stopping on test accuracy.
    Train(TrainArgs),
    /// Score a checkpoint: metrics.json, confusion.csv, roc.csv.
    Eval(EvalArgs),
    /// Render a training log, ROC curve or confusion matrix CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Images per class.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub per_class: u64,
    /// Side length in pixels.
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..=4096))]
    pub size: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root with one sub-directory per class.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// tiny or paper.
    #[arg(long)]
    pub preset: Option<String>,
    /// key=value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Any config key, e.g. --set patience=5. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training fraction, as 0.8 or 80:20.
    #[arg(long)]
    pub split: Option<String>,
    /// Split each class separately.
    #[arg(long)]
    pub stratified: bool,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    /// Write config.resolved and stop.
    #[arg(long)]
    pub dry_run: bool,
}

impl TrainArgs {
    /// Flag values as config pairs; `--set` first so named flags win.
    pub fn flag_pairs(&self) -> Result<Vec<(String, String)>, CliError> {
        let mut pairs = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        push("data", self.data.as_ref().map(|p| p.display().to_string()));
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        push("learning_rate", self.lr.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("max_epochs", self.epochs.map(|v| v.to_string()));
        push("patience", self.patience.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("split", self.split.clone());
        push("stratified", self.stratified.then(|| "true".to_string()));
        push("image_size", self.image_size.map(|v| v.to_string()));
        push("patch_size", self.patch_size.map(|v| v.to_string()));
        push("embed_dim", self.embed_dim.map(|v| v.to_string()));
        push("num_layers", self.layers.map(|v| v.to_string()));
        push("num_heads", self.heads.map(|v| v.to_string()));
        push("ffn_dim", self.ffn_dim.map(|v| v.to_string()));
        Ok(pairs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    All,
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Which part of the dataset to score; train/test repeat the training split.
    #[arg(long, value_enum, default_value_t = SplitChoice::All)]
    pub split: SplitChoice,
    /// Run config giving the split; defaults to config.resolved next to the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["log", "roc", "cm"])))]
pub struct PlotArgs {
    /// train_log.csv
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// roc.csv
    #[arg(long)]
    pub roc: Option<PathBuf>,
    /// confusion.csv
    #[arg(long)]
    pub cm: Option<PathBuf>,
    /// Output SVG file.
    #[arg(long)]
    pub out: PathBuf,
}

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok().filter(|s| !s.trim().is_empty())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let seed = match env_seed() {
        Some(s) => s
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{s}` is not an integer")))?,
        None => a.seed,
    };
    let size = a.size as usize;
    let images = generate_synthetic_images(a.per_class as usize, size, size, seed)?;
    let paths = write_class_directories(&a.out, &images, &default_class_names())?;
    println!("wrote {} images to {}", paths.len(), a.out.display());
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let file_pairs = match &a.config {
        Some(p) => config::read_config_file(p)?,
        None => Vec::new(),
    };
    let cfg = config::resolve(
        a.preset.as_deref(),
        &file_pairs,
        &a.flag_pairs()?,
        env_seed().as_deref(),
    )?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("train needs --out (or `out` in the config file)".into()))?;
    let resolved = cfg.write_resolved(&out)?;
    if a.dry_run {
        print!("{}", cfg.to_text());
        log::info!("wrote {}", resolved.display());
        return Ok(());
    }
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| CliError::Usage("train needs --data (or `data` in the config file)".into()))?;
    let mut ds = load_directory_dataset(&data, cfg.model.image_size, &default_class_names())?;
    if let Some((m, s)) = cfg.standardize {
        ds.standardize(m, s)?;
    }
    let split_seed = derive_seed(cfg.train.seed, stream::SPLIT);
    let split = if cfg.stratified {
        split_dataset_stratified(&ds, cfg.split, split_seed)?
    } else {
        split_dataset(&ds, cfg.split, split_seed)?
    };
    log::info!(
        "{} samples: {} train, {} test",
        ds.len(),
        split.train.len(),
        split.test.len()
    );
    let outcome = fit(&ds, &split, &cfg.model, &cfg.train, &out)?;
    println!(
        "best test accuracy {} at epoch {} (stopped after {} epochs); wrote {} and {}",
        outcome.best.best_accuracy,
        outcome.best.best_epoch,
        outcome.stop_epoch,
        out.join(BEST_CHECKPOINT).display(),
        out.join(TRAIN_LOG).display()
    );
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let config_path = a.config.clone().or_else(|| {
        let p = a.ckpt.parent()?.join(RESOLVED_FILE);
        p.exists().then_some(p)
    });
    let run = match &config_path {
        Some(p) => Some(config::resolve(
            None,
            &config::read_config_file(p)?,
            &[],
            env_seed().as_deref(),
        )?),
        None => None,
    };
    let ckpt = match &run {
        Some(r) => load_checkpoint_for(&a.ckpt, &r.model)?,
        None => load_checkpoint(&a.ckpt)?,
    };
    let run = match run {
        Some(r) => r,
        None => {
            if a.split != SplitChoice::All {
                log::warn!("no run config found; using default split and seed");
            }
            config::resolve(None, &[], &[], env_seed().as_deref())?
        }
    };
    let model_cfg = ckpt.config().clone();
    let mut ds = load_directory_dataset(&a.data, model_cfg.image_size, &default_class_names())?;
    if let Some((m, s)) = run.standardize {
        ds.standardize(m, s)?;
    }
    let indices = match a.split {
        SplitChoice::All => (0..ds.len()).collect(),
        choice => {
            let seed = derive_seed(run.train.seed, stream::SPLIT);
            let s = if run.stratified {
                split_dataset_stratified(&ds, run.split, seed)?
            } else {
                split_dataset(&ds, run.split, seed)?
            };
            if choice == SplitChoice::Train {
                s.train
            } else {
                s.test
            }
        }
    };
    let ev = evaluate(&ckpt.params, &ds, &indices, &run.train)?;
    let cm = metrics::confusion(&ev.predictions, &ev.labels, metrics::DEFAULT_POSITIVE)?;
    let s = metrics::summary(&cm)?;
    let roc = match metrics::roc(&ev.scores, &ev.labels) {
        Ok(r) => Some(r),
        Err(MetricsError::Undefined(msg)) => {
            log::warn!("AUC not reported: {msg}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let json = serde_json::json!({
        "accuracy": s.accuracy,
        "precision": s.precision,
        "recall": s.recall,
        "f1": s.f1,
        "auc": roc.as_ref().map(|r| r.auc),
    });
    let mut text = serde_json::to_string_pretty(&json).expect("plain json");
    text.push('\n');
    write_atomic(&a.out.join("metrics.json"), text.as_bytes())?;
    write_atomic(&a.out.join("confusion.csv"), metrics::confusion_csv(&cm).as_bytes())?;
    let roc_text = roc.as_ref().map_or_else(|| "threshold,fpr,tpr\n".to_string(), metrics::roc_csv);
    write_atomic(&a.out.join("roc.csv"), roc_text.as_bytes())?;
    println!(
        "n={} accuracy {}% precision {}% recall {}% f1 {}% auc {}",
        indices.len(),
        metrics::percent(s.accuracy),
        metrics::percent(s.precision),
        metrics::percent(s.recall),
        metrics::percent(s.f1),
        roc.map_or_else(|| "n/a".to_string(), |r| format!("{}%", metrics::percent(r.auc)))
    );
    Ok(())
}

pub fn cmd_plot(a: &PlotArgs) -> Result<(), CliError> {
    let (path, render): (&PathBuf, fn(&str, &str) -> Result<String, CliError>) =
        match (&a.log, &a.roc, &a.cm) {
            (Some(p), _, _) => (p, plot::log_svg),
            (_, Some(p), _) => (p, plot::roc_svg),
            (_, _, Some(p)) => (p, plot::cm_svg),
            _ => return Err(CliError::Usage("one of --log, --roc, --cm is required".into())),
        };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let svg = render(&text, &path.display().to_string())?;
    write_atomic(&a.out, svg.as_bytes())?;
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
