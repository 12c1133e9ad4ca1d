//! Model containers, inference helpers and the `.model.json` format.
//!
//! Weights are stored as decimal strings produced by Rust's shortest
//! round-trip float formatting, so a save/load cycle is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detector::{decode_predictions, nms, DetectorSpec};
use super::encdec::EncDecSpec;
use super::gan::GanSpec;
use super::network::{table_memory, Network, ParamSet};
use super::{ModelError, Result};
use crate::datakit::{write_atomic, Sample};
use crate::evalkit::{flops, mask_iou, Detection, FlopsReport, LayerDesc};
use crate::tensorcore::{Tape, Tensor};

pub const MODEL_FORMAT: &str = "shadekit-model";
pub const MODEL_VERSION: u32 = 1;
/// Samples per forward pass during inference.
pub const EVAL_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "spec", rename_all = "kebab-case")]
pub enum ModelSpec {
    Segmentation(EncDecSpec),
    Gan(GanSpec),
    Detector(DetectorSpec),
}

impl ModelSpec {
    pub fn family(&self) -> &'static str {
        match self {
            ModelSpec::Segmentation(_) => "segmentation",
            ModelSpec::Gan(_) => "gan",
            ModelSpec::Detector(_) => "detector",
        }
    }

    /// Main network (generator for the GAN) and the optional discriminator.
    pub fn networks(&self) -> Result<(Network, Option<Network>)> {
        Ok(match self {
            ModelSpec::Segmentation(s) => (s.network()?, None),
            ModelSpec::Gan(s) => (s.generator_network()?, Some(s.discriminator_network()?)),
            ModelSpec::Detector(s) => (s.network()?, None),
        })
    }

    pub fn layer_table(&self) -> Result<Vec<LayerDesc>> {
        let (main, disc) = self.networks()?;
        Ok(match disc {
            Some(d) => {
                let mut t = main.layer_table("generator.");
                t.extend(d.layer_table("discriminator."));
                t
            }
            None => main.layer_table(""),
        })
    }

    pub fn flops(&self) -> Result<FlopsReport> {
        Ok(flops(&self.layer_table()?))
    }

    /// Estimated bytes of one training step at `batch`.
    pub fn memory_estimate(&self, batch: usize) -> Result<u64> {
        Ok(table_memory(&self.layer_table()?, batch))
    }

    pub fn input_size(&self) -> usize {
        match self {
            ModelSpec::Segmentation(s) => s.input_size,
            ModelSpec::Gan(s) => s.generator.input_size,
            ModelSpec::Detector(s) => s.input_size,
        }
    }
}

/// A spec plus its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamSet,
    pub discriminator: Option<ParamSet>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedArray {
    name: String,
    shape: Vec<usize>,
    data: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    spec: ModelSpec,
    weights: Vec<NamedArray>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    discriminator_weights: Option<Vec<NamedArray>>,
}

fn to_arrays(p: &ParamSet) -> Vec<NamedArray> {
    p.names
        .iter()
        .zip(&p.tensors)
        .map(|(name, t)| NamedArray {
            name: name.clone(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v.to_string()).collect(),
        })
        .collect()
}

fn from_arrays(arrays: Vec<NamedArray>, net: &Network) -> Result<ParamSet> {
    let mut names = Vec::with_capacity(arrays.len());
    let mut tensors = Vec::with_capacity(arrays.len());
    for a in arrays {
        let data = a
            .data
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ModelError::Format(format!("{}: {s:?} is not a finite number", a.name)))
            })
            .collect::<Result<Vec<f64>>>()?;
        tensors.push(Tensor::new(a.shape, data)?);
        names.push(a.name);
    }
    let params = ParamSet { names, tensors };
    net.check_params(&params)?;
    for (slot, name) in net.slots.iter().zip(&params.names) {
        if &slot.name != name {
            return Err(ModelError::Format(format!("expected weight {}, found {name}", slot.name)));
        }
    }
    Ok(params)
}

impl Model {
    /// Freshly initialised weights; the discriminator uses `seed + 1`.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Model> {
        let (main, disc) = spec.networks()?;
        Ok(Model {
            params: main.init_params(seed),
            discriminator: disc.map(|d| d.init_params(seed.wrapping_add(1))),
            spec,
        })
    }

    /// Every weight and bias set to zero.
    pub fn zeroed(spec: ModelSpec) -> Result<Model> {
        let (main, disc) = spec.networks()?;
        Ok(Model {
            params: main.zero_params(),
            discriminator: disc.map(|d| d.zero_params()),
            spec,
        })
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            spec: self.spec.clone(),
            weights: to_arrays(&self.params),
            discriminator_weights: self.discriminator.as_ref().map(to_arrays),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported model format {} version {}",
                file.format, file.version
            )));
        }
        let (main, disc) = file.spec.networks()?;
        let params = from_arrays(file.weights, &main)?;
        let discriminator = match (disc, file.discriminator_weights) {
            (Some(net), Some(w)) => Some(from_arrays(w, &net)?),
            (None, None) => None,
            (Some(_), None) => return Err(ModelError::Format("missing discriminator weights".into())),
            (None, Some(_)) => return Err(ModelError::Format("unexpected discriminator weights".into())),
        };
        Ok(Model {
            spec: file.spec,
            params,
            discriminator,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(write_atomic(path, self.to_json().as_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Format(format!("{}: {e}", path.display())))?;
        Model::from_json(&text)
    }

    pub fn all_finite(&self) -> bool {
        self.params.all_finite() && self.discriminator.as_ref().is_none_or(ParamSet::all_finite)
    }

    /// Forward pass of the main network (generator for the GAN) on `[N, 3, H, W]`.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let (net, _) = self.spec.networks()?;
        run(&net, &self.params, images)
    }

    /// Discriminator scores `[N, 1]` for a GAN model.
    pub fn discriminate(&self, images: &Tensor) -> Result<Tensor> {
        let (_, disc) = self.spec.networks()?;
        match (disc, &self.discriminator) {
            (Some(net), Some(p)) => run(&net, p, images),
            _ => Err(ModelError::Family {
                expected: "gan",
                actual: self.spec.family(),
            }),
        }
    }

    /// Mask probabilities per sample (row-major `H x W`).
    pub fn predict_masks(&self, samples: &[&Sample]) -> Result<Vec<Vec<f64>>> {
        if matches!(self.spec, ModelSpec::Detector(_)) {
            return Err(ModelError::Family {
                expected: "segmentation or gan",
                actual: self.spec.family(),
            });
        }
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(EVAL_BATCH) {
            let pred = self.forward(&image_batch(chunk)?)?;
            let plane = pred.len() / chunk.len();
            out.extend(pred.data().chunks(plane).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Mean mask IoU against the samples' ground-truth masks.
    pub fn mean_mask_iou(&self, samples: &[&Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Ok(0.0);
        }
        let preds = self.predict_masks(samples)?;
        let mut total = 0.0;
        for (s, p) in samples.iter().zip(&preds) {
            let gt = s.mask.as_ref().ok_or_else(|| ModelError::MissingMask(s.id.clone()))?;
            total += mask_iou(p, &gt.to_f64(), 0.5).map_err(|e| ModelError::Format(e.to_string()))?;
        }
        Ok(total / samples.len() as f64)
    }

    /// Decoded detections after NMS at IoU 0.5.
    pub fn detect(&self, samples: &[&Sample], conf_threshold: f64) -> Result<Vec<Detection>> {
        let ModelSpec::Detector(spec) = &self.spec else {
            return Err(ModelError::Family {
                expected: "detector",
                actual: self.spec.family(),
            });
        };
        let size = spec.input_size as f64;
        let mut dets = Vec::new();
        for chunk in samples.chunks(EVAL_BATCH) {
            let raw = self.forward(&image_batch(chunk)?)?;
            let ids: Vec<String> = chunk.iter().map(|s| s.id.clone()).collect();
            dets.extend(decode_predictions(&raw, conf_threshold, &ids, size, size)?);
        }
        Ok(nms(&dets, 0.5))
    }
}

/// Inference through a fresh tape with frozen parameters.
pub fn run(net: &Network, params: &ParamSet, input: &Tensor) -> Result<Tensor> {
    net.check_params(params)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false)?;
    let x = tape.constant(input.clone())?;
    let y = net.forward(&mut tape, &vars, x)?;
    Ok(tape.value(y).clone())
}

/// `out = image + g·M·(1 - image)` on `[N, 3, H, W]` images and `[N, 1, H, W]` masks.
pub fn apply_attenuation(image: &Tensor, mask: &Tensor, gain: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(image.clone())?;
    let m = tape.constant(mask.clone())?;
    let y = tape.attenuate(x, m, gain)?;
    Ok(tape.value(y).clone())
}

fn check_size(samples: &[&Sample]) -> Result<(usize, usize)> {
    let first = samples.first().ok_or_else(|| ModelError::Spec("empty batch".into()))?;
    let (w, h) = (first.width(), first.height());
    if let Some(s) = samples.iter().find(|s| (s.width(), s.height()) != (w, h)) {
        return Err(ModelError::Spec(format!(
            "sample {} is {}x{}, batch is {w}x{h}",
            s.id,
            s.width(),
            s.height()
        )));
    }
    Ok((w, h))
}

/// `[N, 3, H, W]` batch of sample images.
pub fn image_batch(samples: &[&Sample]) -> Result<Tensor> {
    let (w, h) = check_size(samples)?;
    let data = samples.iter().flat_map(|s| s.image.to_chw()).collect();
    Ok(Tensor::new(vec![samples.len(), 3, h, w], data)?)
}

/// `[N, 3, H, W]` batch of paired shadow-free images.
pub fn shadow_free_batch(samples: &[&Sample]) -> Result<Tensor> {
    let (w, h) = check_size(samples)?;
    let mut data = Vec::with_capacity(samples.len() * 3 * w * h);
    for s in samples {
        let sf = s.shadow_free.as_ref().ok_or_else(|| ModelError::MissingPair(s.id.clone()))?;
        data.extend(sf.to_chw());
    }
    Ok(Tensor::new(vec![samples.len(), 3, h, w], data)?)
}

/// `[N, 1, H, W]` batch of ground-truth masks.
pub fn mask_batch(samples: &[&Sample]) -> Result<Tensor> {
    let (w, h) = check_size(samples)?;
    let mut data = Vec::with_capacity(samples.len() * w * h);
    for s in samples {
        let m = s.mask.as_ref().ok_or_else(|| ModelError::MissingMask(s.id.clone()))?;
        data.extend(m.to_f64());
    }
    Ok(Tensor::new(vec![samples.len(), 1, h, w], data)?)
}
