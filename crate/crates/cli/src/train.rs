//! `train-seg`, `train-gan` and `train-det`.
//!
//! Each run writes `<out>.best.model.json`, `<out>.last.model.json`,
//! `<out>.history.csv` and the run manifest `<out>.run.json`.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use shadekit::datakit::{dataset_hash, load_dataset, write_atomic, Sample, Split};
use shadekit::models::{
    train_detector as fit_detector, train_gan as fit_gan, train_segmentation as fit_segmentation, DetectorSpec, EncDecSpec, GanSpec, TrainConfig, TrainOutcome,
};
use shadekit::tensorcore::OptimizerKind;

use crate::config::{resolve, RunManifest, DEFAULT_SEED};
use crate::data::require;
use crate::error::{usage, Result};
use crate::Globals;

#[derive(Args)]
pub struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Split of the training dataset to use (default: train, or all samples when unsplit).
    #[arg(long)]
    train_split: Option<String>,
    /// Validation dataset directory (default: the training dataset).
    #[arg(long)]
    val: Option<PathBuf>,
    /// Split of the validation dataset to use (default: val, or all samples when unsplit).
    #[arg(long)]
    val_split: Option<String>,
    /// Output prefix; a trailing `.model.json` is dropped.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training memory budget in bytes.
    #[arg(long)]
    memory_budget: Option<u64>,
}

#[derive(Args)]
pub struct TrainSegArgs {
    #[command(flatten)]
    common: TrainArgs,
}

#[derive(Args)]
pub struct TrainGanArgs {
    #[command(flatten)]
    common: TrainArgs,
    /// Weight of the mask sparsity term.
    #[arg(long)]
    lambda: Option<f64>,
    /// Attenuation gain applied through the generator mask.
    #[arg(long)]
    gain: Option<f64>,
}

#[derive(Args)]
pub struct TrainDetArgs {
    #[command(flatten)]
    common: TrainArgs,
    /// Stride-1 convolutions appended to each backbone stage.
    #[arg(long)]
    extra_convs: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig<S> {
    pub train: Option<PathBuf>,
    pub train_split: Option<String>,
    pub val: Option<PathBuf>,
    pub val_split: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub memory_budget: u64,
    pub spec: S,
}

impl<S> TrainRunConfig<S> {
    fn new(t: TrainConfig, spec: S) -> Self {
        TrainRunConfig {
            train: None,
            train_split: None,
            val: None,
            val_split: None,
            out: None,
            seed: t.seed,
            epochs: t.epochs,
            lr: t.lr,
            batch_size: t.batch_size,
            optimizer: t.optimizer,
            memory_budget: t.memory_budget,
            spec,
        }
    }

    fn apply(&mut self, g: &Globals, a: TrainArgs) {
        self.train = a.train.or(self.train.take());
        self.train_split = a.train_split.or(self.train_split.take());
        self.val = a.val.or(self.val.take());
        self.val_split = a.val_split.or(self.val_split.take());
        self.out = a.out.or(self.out.take());
        self.seed = g.seed.unwrap_or(self.seed);
        self.epochs = a.epochs.unwrap_or(self.epochs);
        self.lr = a.lr.unwrap_or(self.lr);
        self.batch_size = a.batch_size.unwrap_or(self.batch_size);
        self.memory_budget = a.memory_budget.unwrap_or(self.memory_budget);
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            seed: self.seed,
            optimizer: self.optimizer,
            memory_budget: self.memory_budget,
        }
    }
}

/// A dataset part chosen by directory and optional split name.
pub struct Selection {
    pub samples: Vec<Sample>,
    pub hash: String,
    pub label: String,
}

/// Loads `dir` and picks `split`; with no explicit split, `fallback` is used
/// when the dataset is split and every sample otherwise.
pub fn select(dir: &Path, split: Option<&str>, fallback: Split) -> Result<Selection> {
    let ds = load_dataset(dir)?;
    let hash = dataset_hash(dir)?;
    let (samples, label) = match (split, &ds.splits) {
        (Some(name), _) => {
            let s = Split::parse(name)
                .ok_or_else(|| usage(format!("unknown split '{name}' (expected train, val or test)")))?;
            if ds.splits.is_none() {
                return Err(usage(format!("{} has no split assignment", dir.display())));
            }
            (ds.part(s).samples, format!("{} split of {}", s.name(), dir.display()))
        }
        (None, Some(_)) => (
            ds.part(fallback).samples,
            format!("{} split of {}", fallback.name(), dir.display()),
        ),
        (None, None) => (ds.samples, dir.display().to_string()),
    };
    if samples.is_empty() {
        return Err(usage(format!("the {label} is empty")));
    }
    Ok(Selection { samples, hash, label })
}

pub fn out_prefix(out: &Path) -> PathBuf {
    let s = out.to_string_lossy();
    PathBuf::from(s.strip_suffix(".model.json").unwrap_or(&s).to_string())
}

pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run<S, F>(g: &Globals, command: &str, mut cfg: TrainRunConfig<S>, a: TrainArgs, patch: impl FnOnce(&mut S), fit: F) -> Result<()>
where
    S: Serialize + DeserializeOwned,
    F: FnOnce(&[Sample], &[Sample], &S, &TrainConfig) -> shadekit::models::Result<TrainOutcome>,
{
    let (started, clock) = (SystemTime::now(), Instant::now());
    cfg = resolve(cfg, g.config.as_deref(), command)?;
    cfg.apply(g, a);
    patch(&mut cfg.spec);
    let train_dir = require(cfg.train.clone(), "train")?;
    let out = out_prefix(&require(cfg.out.clone(), "out")?);
    let val_dir = cfg.val.clone().unwrap_or_else(|| train_dir.clone());
    let train = select(&train_dir, cfg.train_split.as_deref(), Split::Train)?;
    let val = select(&val_dir, cfg.val_split.as_deref(), Split::Val)?;
    g.info(format!(
        "{command}: {} samples from the {}, {} from the {}, {} epochs",
        train.samples.len(),
        train.label,
        val.samples.len(),
        val.label,
        cfg.epochs
    ));

    let outcome = fit(&train.samples, &val.samples, &cfg.spec, &cfg.train_config())?;
    let h = &outcome.history;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| crate::error::runtime(format!("{}: {e}", parent.display())))?;
    }
    outcome.best.save(&with_suffix(&out, ".best.model.json"))?;
    outcome.last.save(&with_suffix(&out, ".last.model.json"))?;
    write_atomic(&with_suffix(&out, ".history.csv"), h.to_csv().as_bytes())?;

    let best_val = h.record(outcome.best_epoch).map(|r| r.val_metric);
    let mut m = RunManifest::new(command, &cfg, started, clock.elapsed());
    m.dataset_hash.insert("train".into(), train.hash);
    m.dataset_hash.insert("val".into(), val.hash);
    m.metrics = Some(json!({
        "metric": h.metric,
        "best_epoch": outcome.best_epoch,
        "best_val_metric": best_val,
        "final_val_metric": h.last().val_metric,
        "final_train_loss": h.last().train_loss,
        "final_extra": h.last().extra,
    }));
    m.history = Some(outcome.history.clone());
    m.save(&with_suffix(&out, ".run.json"))?;
    g.info(format!(
        "{command}: final {} {:.4} (best {:.4} at epoch {}), wrote {}.*",
        h.metric,
        h.last().val_metric,
        best_val.unwrap_or(f64::NAN),
        outcome.best_epoch,
        out.display()
    ));
    Ok(())
}

pub fn train_seg(g: &Globals, a: TrainSegArgs) -> Result<()> {
    let cfg = TrainRunConfig::new(TrainConfig::segmentation(DEFAULT_SEED), EncDecSpec::default());
    run(g, "train-seg", cfg, a.common, |_| {}, fit_segmentation)
}

pub fn train_gan(g: &Globals, a: TrainGanArgs) -> Result<()> {
    let cfg = TrainRunConfig::new(TrainConfig::gan(DEFAULT_SEED), GanSpec::default());
    let patch = |s: &mut GanSpec| {
        s.lambda = a.lambda.unwrap_or(s.lambda);
        s.gain = a.gain.unwrap_or(s.gain);
    };
    run(g, "train-gan", cfg, a.common, patch, fit_gan)
}

pub fn train_det(g: &Globals, a: TrainDetArgs) -> Result<()> {
    let cfg = TrainRunConfig::new(TrainConfig::detector(DEFAULT_SEED), DetectorSpec::default());
    let patch = |s: &mut DetectorSpec| s.extra_convs = a.extra_convs.unwrap_or(s.extra_convs);
    run(g, "train-det", cfg, a.common, patch, fit_detector)
}
