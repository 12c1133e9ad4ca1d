//! `eval` and `flops`.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use clap::Args;
use serde::{Deserialize, Serialize};
use shadekit::datakit::{write_atomic, Sample, Split};
use shadekit::evalkit::{
    evaluate_detections, flops as table_flops, mask_iou, BBox, Detection, FlopsReport, GroundTruth, LayerDesc,
    MetricsReport,
};
use shadekit::models::{attenuation_score, EncDecSpec, GanSpec, DetectorSpec, Model, ModelSpec};

use crate::config::{read_json, resolve, write_json, RunManifest, DEFAULT_SEED};
use crate::data::require;
use crate::error::{runtime, usage, Result};
use crate::plot::write_curve_plots;
use crate::train::select;
use crate::Globals;

#[derive(Args)]
pub struct EvalArgs {
    /// Model file to evaluate.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Split to evaluate (default: test, or all samples when unsplit).
    #[arg(long)]
    split: Option<String>,
    /// Output directory for metrics, curves, predictions and plots.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Predict the ground truth itself instead of running a model.
    #[arg(long)]
    oracle: bool,
    /// Lowest detector score kept when decoding predictions.
    #[arg(long)]
    conf_threshold: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub model: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub split: Option<String>,
    pub report: Option<PathBuf>,
    pub oracle: bool,
    pub conf_threshold: f64,
    pub seed: u64,
}

/// Contents of `metrics.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Model family, or `oracle`.
    pub family: String,
    pub model: Option<String>,
    /// `best` or `last` when the model file follows the training naming.
    pub checkpoint: Option<String>,
    pub dataset: String,
    pub samples: usize,
    pub attenuation_score: Option<f64>,
    pub report: MetricsReport,
}

fn checkpoint_of(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_string_lossy().into_owned();
    ["best", "last"]
        .into_iter()
        .find(|c| name.ends_with(&format!(".{c}.model.json")))
        .map(str::to_string)
}

/// One detection per 4-connected component of the binarized mask, boxed by
/// its pixel hull and scored by its mean probability.
pub fn mask_detections(id: &str, probs: &[f64], width: usize, height: usize) -> Vec<Detection> {
    let mut label = vec![false; probs.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..probs.len() {
        if label[start] || probs[start] < 0.5 {
            continue;
        }
        label[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (width, height, 0, 0);
        let (mut total, mut n) = (0.0, 0usize);
        while let Some(p) = stack.pop() {
            let (x, y) = (p % width, p / width);
            (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x), y1.max(y));
            total += probs[p];
            n += 1;
            let mut visit = |q: usize| {
                if !label[q] && probs[q] >= 0.5 {
                    label[q] = true;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < width {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - width);
            }
            if y + 1 < height {
                visit(p + width);
            }
        }
        out.push(Detection {
            image_id: id.to_string(),
            bbox: BBox::new(x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64),
            score: (total / n as f64).clamp(0.0, 1.0),
            class_id: 0,
        });
    }
    out
}

fn require_masks(samples: &[&Sample], family: &str) -> Result<()> {
    match samples.iter().find(|s| s.mask.is_none()) {
        Some(s) => Err(usage(format!(
            "{family} model needs ground-truth masks, but sample {} has none",
            s.id
        ))),
        None => Ok(()),
    }
}

fn mean_iou(samples: &[&Sample], preds: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for (s, p) in samples.iter().zip(preds) {
        let gt = s.mask.as_ref().expect("masks checked").to_f64();
        total += mask_iou(p, &gt, 0.5)?;
    }
    Ok(total / samples.len() as f64)
}

pub fn eval(g: &Globals, a: EvalArgs) -> Result<()> {
    let (started, clock) = (SystemTime::now(), Instant::now());
    let defaults = EvalConfig {
        model: None,
        dataset: None,
        split: None,
        report: None,
        oracle: false,
        conf_threshold: 0.01,
        seed: DEFAULT_SEED,
    };
    let mut cfg = resolve(defaults, g.config.as_deref(), "eval")?;
    cfg.model = a.model.or(cfg.model);
    cfg.dataset = a.dataset.or(cfg.dataset);
    cfg.split = a.split.or(cfg.split);
    cfg.report = a.report.or(cfg.report);
    cfg.oracle |= a.oracle;
    cfg.conf_threshold = a.conf_threshold.unwrap_or(cfg.conf_threshold);
    cfg.seed = g.seed.unwrap_or(cfg.seed);
    let dir = require(cfg.dataset.clone(), "dataset")?;
    let out = require(cfg.report.clone(), "report")?;
    if !(0.0..=1.0).contains(&cfg.conf_threshold) {
        return Err(usage(format!("--conf-threshold must lie in [0, 1], got {}", cfg.conf_threshold)));
    }

    let sel = select(&dir, cfg.split.as_deref(), Split::Test)?;
    let samples: Vec<&Sample> = sel.samples.iter().collect();
    let gts: Vec<GroundTruth> = samples.iter().flat_map(|s| s.ground_truths()).collect();

    let (family, model_path, dets, mean_mask_iou, attenuation, flops) = if cfg.oracle {
        let dets = gts
            .iter()
            .map(|gt| Detection {
                image_id: gt.image_id.clone(),
                bbox: gt.bbox,
                score: 1.0,
                class_id: gt.class_id,
            })
            .collect();
        let iou = samples.iter().all(|s| s.mask.is_some()).then(|| {
            let preds: Vec<Vec<f64>> = samples.iter().map(|s| s.mask.as_ref().expect("checked").to_f64()).collect();
            mean_iou(&samples, &preds)
        });
        ("oracle".to_string(), None, dets, iou.transpose()?, None, None)
    } else {
        let path = require(cfg.model.clone(), "model (or --oracle)")?;
        let model = Model::load(&path)?;
        let size = model.spec.input_size();
        if let Some(s) = samples.iter().find(|s| s.width() != size || s.height() != size) {
            return Err(usage(format!(
                "model expects {size}x{size} images but sample {} is {}x{}",
                s.id,
                s.width(),
                s.height()
            )));
        }
        let family = model.spec.family();
        let flops = model.spec.flops()?.total;
        match &model.spec {
            ModelSpec::Detector(_) => {
                let dets = model.detect(&samples, cfg.conf_threshold)?;
                (family.to_string(), Some(path), dets, None, None, Some(flops))
            }
            _ => {
                require_masks(&samples, family)?;
                let preds = model.predict_masks(&samples)?;
                let dets = samples
                    .iter()
                    .zip(&preds)
                    .flat_map(|(s, p)| mask_detections(&s.id, p, s.width(), s.height()))
                    .collect();
                let iou = mean_iou(&samples, &preds)?;
                let att = match model.spec {
                    ModelSpec::Gan(_) => Some(attenuation_score(&model, &samples)?),
                    _ => None,
                };
                (family.to_string(), Some(path), dets, Some(iou), att, Some(flops))
            }
        }
    };

    let mut report = evaluate_detections(&dets, &gts);
    report.mean_mask_iou = mean_mask_iou;
    report.flops = flops;
    let metrics = EvalMetrics {
        family,
        checkpoint: model_path.as_deref().and_then(checkpoint_of),
        model: model_path.as_ref().map(|p| p.display().to_string()),
        dataset: sel.label.clone(),
        samples: samples.len(),
        attenuation_score: attenuation,
        report,
    };

    std::fs::create_dir_all(&out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    write_json(&out.join("predictions.json"), &dets)?;
    write_json(&out.join("metrics.json"), &metrics)?;
    write_atomic(&out.join("curves.csv"), metrics.report.curves.to_csv().as_bytes())?;
    write_curve_plots(&metrics.report.curves, &out)?;
    let mut m = RunManifest::new("eval", &cfg, started, clock.elapsed());
    m.dataset_hash.insert("dataset".into(), sel.hash);
    m.metrics = Some(serde_json::to_value(&metrics).expect("metrics serialize"));
    m.save(&out.join("run.json"))?;

    let r = &metrics.report;
    let mut line = format!(
        "{} on the {} ({} samples): mAP50 {:.4}, mAP50-95 {:.4}",
        metrics.family, sel.label, metrics.samples, r.map50, r.map50_95
    );
    if let Some(iou) = r.mean_mask_iou {
        line.push_str(&format!(", mean mask IoU {iou:.4}"));
    }
    if let Some(c) = &metrics.checkpoint {
        line.push_str(&format!(" [{c} checkpoint]"));
    }
    g.info(line);
    Ok(())
}

// ----------------------------------------------------------------------

#[derive(Args)]
pub struct FlopsArgs {
    /// Model file, or a bare `{"family", "spec"}` model spec.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Default spec of a family: segmentation, gan or detector.
    #[arg(long)]
    family: Option<String>,
    /// JSON array of layer descriptions.
    #[arg(long)]
    layers: Option<PathBuf>,
    /// Also write the report as JSON to this file.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlopsConfig {
    pub model: Option<PathBuf>,
    pub family: Option<String>,
    pub layers: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub seed: u64,
}

fn spec_from_file(path: &Path) -> Result<ModelSpec> {
    let value = read_json(path)?;
    if value.get("weights").is_some() {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        return Ok(Model::from_json(&text)?.spec);
    }
    serde_json::from_value(value).map_err(|e| usage(format!("{}: not a model or model spec: {e}", path.display())))
}

fn default_spec(family: &str) -> Result<ModelSpec> {
    match family {
        "segmentation" => Ok(ModelSpec::Segmentation(EncDecSpec::default())),
        "gan" => Ok(ModelSpec::Gan(GanSpec::default())),
        "detector" => Ok(ModelSpec::Detector(DetectorSpec::default())),
        other => Err(usage(format!("unknown family '{other}' (expected segmentation, gan or detector)"))),
    }
}

pub fn flops(g: &Globals, a: FlopsArgs) -> Result<()> {
    let defaults = FlopsConfig {
        model: None,
        family: None,
        layers: None,
        json: None,
        seed: DEFAULT_SEED,
    };
    let mut cfg = resolve(defaults, g.config.as_deref(), "flops")?;
    cfg.model = a.model.or(cfg.model);
    cfg.family = a.family.or(cfg.family);
    cfg.layers = a.layers.or(cfg.layers);
    cfg.json = a.json.or(cfg.json);
    cfg.seed = g.seed.unwrap_or(cfg.seed);

    let report: FlopsReport = match (&cfg.model, &cfg.family, &cfg.layers) {
        (Some(p), None, None) => spec_from_file(p)?.flops()?,
        (None, Some(f), None) => default_spec(f)?.flops()?,
        (None, None, Some(p)) => {
            let layers: Vec<LayerDesc> = serde_json::from_value(read_json(p)?)
                .map_err(|e| usage(format!("{}: not a layer list: {e}", p.display())))?;
            table_flops(&layers)
        }
        _ => return Err(usage("give exactly one of --model, --family or --layers")),
    };
    print!("{}", report.to_table());
    if let Some(path) = &cfg.json {
        write_json(path, &report)?;
    }
    g.info(format!("total {} operations", report.total));
    Ok(())
}
