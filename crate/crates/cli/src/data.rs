//! `synth`, `split` and `augment`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;
use shadekit::datakit::{
    add_noise, dataset_hash, hflip, load_dataset, manifest_bytes, parse_ratios, read_manifest, save_dataset,
    split_dataset, synth_dataset, warp, write_atomic, Dataset, Provenance, Sample, SceneConfig, Split,
    SplitAssignment, WarpParams, MANIFEST_FILE,
};

use crate::config::{resolve, RunManifest, DEFAULT_SEED};
use crate::error::{runtime, usage, Result};
use crate::Globals;

pub fn require<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| usage(format!("missing required --{flag} (flag or config key)")))
}

fn seed_or(g: &Globals, configured: u64) -> u64 {
    g.seed.unwrap_or(configured)
}

// ----------------------------------------------------------------------

#[derive(Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of scenes.
    #[arg(long)]
    count: Option<usize>,
    /// Image side length in pixels.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub out: Option<PathBuf>,
    pub count: usize,
    pub seed: u64,
    pub scene: SceneConfig,
}

pub fn synth(g: &Globals, a: SynthArgs) -> Result<()> {
    let (started, clock) = (SystemTime::now(), Instant::now());
    let defaults = SynthConfig {
        out: None,
        count: 250,
        seed: DEFAULT_SEED,
        scene: SceneConfig::with_seed(DEFAULT_SEED),
    };
    let mut cfg = resolve(defaults, g.config.as_deref(), "synth")?;
    cfg.out = a.out.or(cfg.out);
    cfg.count = a.count.unwrap_or(cfg.count);
    cfg.seed = seed_or(g, cfg.seed);
    cfg.scene.size = a.size.unwrap_or(cfg.scene.size);
    cfg.scene.seed = cfg.seed;
    let out = require(cfg.out.clone(), "out")?;
    cfg.scene.validate()?;

    let ds = Dataset::new(cfg.scene.size, synth_dataset(&cfg.scene, cfg.count)?);
    save_dataset(&ds, &out)?;
    let hash = dataset_hash(&out)?;
    let mut m = RunManifest::new("synth", &cfg, started, clock.elapsed());
    m.dataset_hash.insert("out".into(), hash.clone());
    m.metrics = Some(json!({ "samples": ds.len() }));
    m.save(&out.join("run.json"))?;
    g.info(format!("wrote {} scenes to {} (sha256 {hash})", ds.len(), out.display()));
    Ok(())
}

// ----------------------------------------------------------------------

#[derive(Args)]
pub struct SplitArgs {
    /// Dataset directory; its manifest gains the split assignment.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Train:val:test ratios.
    #[arg(long)]
    ratios: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub dataset: Option<PathBuf>,
    pub ratios: String,
    pub seed: u64,
}

pub fn split(g: &Globals, a: SplitArgs) -> Result<()> {
    let (started, clock) = (SystemTime::now(), Instant::now());
    let defaults = SplitConfig {
        dataset: None,
        ratios: "8:1:1".into(),
        seed: DEFAULT_SEED,
    };
    let mut cfg = resolve(defaults, g.config.as_deref(), "split")?;
    cfg.dataset = a.dataset.or(cfg.dataset);
    cfg.ratios = a.ratios.unwrap_or(cfg.ratios);
    cfg.seed = seed_or(g, cfg.seed);
    let dir = require(cfg.dataset.clone(), "dataset")?;
    let ratios = parse_ratios(&cfg.ratios)?;

    let ds = load_dataset(&dir)?;
    let assignment = split_dataset(&ds, ratios, cfg.seed)?;
    let mut manifest = read_manifest(&dir)?;
    manifest.splits = Some(assignment.clone());
    write_atomic(&dir.join(MANIFEST_FILE), &manifest_bytes(&manifest))?;

    let (tr, va, te) = assignment.sizes();
    let mut m = RunManifest::new("split", &cfg, started, clock.elapsed());
    m.dataset_hash.insert("dataset".into(), dataset_hash(&dir)?);
    m.metrics = Some(json!({ "train": tr, "val": va, "test": te }));
    m.save(&dir.join("split.run.json"))?;
    g.info(format!("split {} samples into {tr}/{va}/{te}", ds.len()));
    Ok(())
}

// ----------------------------------------------------------------------

#[derive(Args)]
pub struct AugmentArgs {
    /// Source dataset directory (must carry a split assignment).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Split to augment; only `train` is accepted.
    #[arg(long)]
    split: Option<String>,
    /// Add a horizontally flipped copy of each sample.
    #[arg(long)]
    hflip: bool,
    /// Add a randomly warped copy of each sample.
    #[arg(long)]
    warp: bool,
    /// Add a copy with Gaussian noise of this standard deviation.
    #[arg(long, value_name = "SIGMA")]
    noise_sigma: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub split: String,
    pub hflip: bool,
    pub warp: bool,
    pub noise_sigma: Option<f64>,
    pub seed: u64,
}

fn named(id: &str, op: &str, r: shadekit::datakit::Result<Sample>) -> Result<Sample> {
    let s = r.map_err(|e| runtime(format!("sample {id}: {op} failed: {e}")))?;
    s.validate().map_err(|e| runtime(format!("sample {id}: {op} produced an invalid sample: {e}")))?;
    Ok(s)
}

/// Augmented copies of `samples`; per-sample seeds are `seed ^ 2i` (warp)
/// and `seed ^ (2i + 1)` (noise).
fn augment_samples(
    samples: &[Sample],
    cfg: &AugmentConfig,
) -> Result<(Vec<Sample>, BTreeMap<String, Provenance>)> {
    let mut out = Vec::new();
    let mut prov = BTreeMap::new();
    let mut push = |s: Sample, source: &str, op: &str, out: &mut Vec<Sample>| {
        let s = Sample {
            id: format!("{source}.{op}"),
            ..s
        };
        prov.insert(
            s.id.clone(),
            Provenance {
                source: source.to_string(),
                op: op.to_string(),
            },
        );
        out.push(s);
    };
    for (i, s) in samples.iter().enumerate() {
        out.push(s.clone());
        let i = i as u64;
        if cfg.hflip {
            push(named(&s.id, "hflip", Ok(hflip(s)))?, &s.id, "hflip", &mut out);
        }
        if cfg.warp {
            let w = named(&s.id, "warp", warp(s, &WarpParams::random(cfg.seed ^ (2 * i))))?;
            push(w, &s.id, "warp", &mut out);
        }
        if let Some(sigma) = cfg.noise_sigma {
            let n = named(&s.id, "noise", add_noise(s, sigma, cfg.seed ^ (2 * i + 1)))?;
            push(n, &s.id, "noise", &mut out);
        }
    }
    Ok((out, prov))
}

pub fn augment(g: &Globals, a: AugmentArgs) -> Result<()> {
    let (started, clock) = (SystemTime::now(), Instant::now());
    let defaults = AugmentConfig {
        dataset: None,
        out: None,
        split: "train".into(),
        hflip: false,
        warp: false,
        noise_sigma: None,
        seed: DEFAULT_SEED,
    };
    let mut cfg = resolve(defaults, g.config.as_deref(), "augment")?;
    cfg.dataset = a.dataset.or(cfg.dataset);
    cfg.out = a.out.or(cfg.out);
    cfg.split = a.split.unwrap_or(cfg.split);
    cfg.hflip |= a.hflip;
    cfg.warp |= a.warp;
    cfg.noise_sigma = a.noise_sigma.or(cfg.noise_sigma);
    cfg.seed = seed_or(g, cfg.seed);
    let src = require(cfg.dataset.clone(), "dataset")?;
    let out = require(cfg.out.clone(), "out")?;

    match Split::parse(&cfg.split) {
        Some(Split::Train) => {}
        Some(other) => {
            return Err(usage(format!(
                "refusing to augment the '{}' split: augmented copies of held-out samples would leak into \
                 training; only the train split may be augmented",
                other.name()
            )))
        }
        None => return Err(usage(format!("unknown split '{}' (expected train, val or test)", cfg.split))),
    }
    if let Some(sigma) = cfg.noise_sigma {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(usage(format!("--noise-sigma must be finite and non-negative, got {sigma}")));
        }
    }
    if same_dir(&src, &out) {
        return Err(usage("--out must differ from --dataset; augment never rewrites its input"));
    }

    let ds = load_dataset(&src)?;
    if ds.splits.is_none() {
        return Err(usage(format!("{} has no split assignment; run `split` first", src.display())));
    }
    let train = ds.part(Split::Train);
    let (samples, provenance) = augment_samples(&train.samples, &cfg)?;
    let ids = samples.iter().map(|s| s.id.clone()).collect();
    let derived = Dataset {
        image_size: ds.image_size,
        class_names: ds.class_names.clone(),
        samples,
        splits: Some(SplitAssignment {
            train: ids,
            val: vec![],
            test: vec![],
        }),
        provenance,
    };
    save_dataset(&derived, &out)?;

    let mut m = RunManifest::new("augment", &cfg, started, clock.elapsed());
    m.dataset_hash.insert("dataset".into(), dataset_hash(&src)?);
    m.dataset_hash.insert("out".into(), dataset_hash(&out)?);
    m.metrics = Some(json!({ "source_samples": train.len(), "samples": derived.len() }));
    m.save(&out.join("run.json"))?;
    g.info(format!(
        "augmented {} train samples into {} at {}",
        train.len(),
        derived.len(),
        out.display()
    ));
    Ok(())
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}
