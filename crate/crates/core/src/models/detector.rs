//! Single-shot grid detector.
//!
//! Each of the `S x S` cells predicts `(tx, ty, tw, th, to, tc_1..tc_C)`.
//! Decoding uses `cx = (j + σ(tx))·W/S`, `cy = (i + σ(ty))·H/S`,
//! `w = W·σ(tw)`, `h = H·σ(th)` and `score = σ(to)·σ(tc)`.

use serde::{Deserialize, Serialize};

use super::network::{NetBuilder, Network};
use super::{ModelError, Result};
use crate::datakit::LabeledBox;
use crate::evalkit::{iou, BBox, Detection};
use crate::tensorcore::{sigmoid, Tensor};

/// Weight of the objectness term on cells without an object.
pub const NOOBJ_WEIGHT: f64 = 0.5;
/// Weight of the box-coordinate term on responsible cells.
pub const BOX_WEIGHT: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub input_size: usize,
    /// Widths of the stride-2 backbone stages.
    pub channels: Vec<usize>,
    /// Stride-1 3x3 convolutions appended to each stage.
    pub extra_convs: usize,
    pub num_classes: usize,
    pub slope: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            input_size: 64,
            channels: vec![16, 32, 64],
            extra_convs: 0,
            num_classes: 1,
            slope: 0.1,
        }
    }
}

impl DetectorSpec {
    pub fn grid(&self) -> usize {
        self.input_size >> self.channels.len()
    }

    pub fn outputs_per_cell(&self) -> usize {
        5 + self.num_classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(ModelError::Spec("backbone ladder must be non-empty with positive widths".into()));
        }
        if self.num_classes == 0 {
            return Err(ModelError::Spec("at least one class is required".into()));
        }
        let div = 1usize << self.channels.len();
        if self.input_size < div || self.input_size % div != 0 {
            return Err(ModelError::Spec(format!(
                "input size {} must be a positive multiple of {div}",
                self.input_size
            )));
        }
        Ok(())
    }

    pub fn network(&self) -> Result<Network> {
        self.validate()?;
        let gain = (2.0 / (1.0 + self.slope * self.slope)).sqrt();
        let mut b = NetBuilder::new([3, self.input_size, self.input_size]);
        for (i, &c) in self.channels.iter().enumerate() {
            b = b.conv(&format!("stage{i}"), c, 3, 2, 1, gain)?.leaky(&format!("stage{i}.act"), self.slope);
            for j in 0..self.extra_convs {
                b = b
                    .conv(&format!("stage{i}.conv{j}"), c, 3, 1, 1, gain)?
                    .leaky(&format!("stage{i}.conv{j}.act"), self.slope);
            }
        }
        Ok(b.conv("head", self.outputs_per_cell(), 1, 1, 0, 1.0)?.build())
    }
}

/// Training targets for one image, laid out like the raw output `[5+C, S, S]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellTargets {
    pub target: Vec<f64>,
    /// Per-cell flag: the cell is responsible for a box.
    pub responsible: Vec<bool>,
}

/// Assigns each box to the cell containing its centre; when several boxes
/// share a cell the largest one wins.
pub fn encode_targets(spec: &DetectorSpec, boxes: &[LabeledBox], width: f64, height: f64) -> Result<CellTargets> {
    let s = spec.grid();
    let k = spec.outputs_per_cell();
    let plane = s * s;
    let mut target = vec![0.0; k * plane];
    let mut owner: Vec<Option<f64>> = vec![None; plane];
    for b in boxes {
        let inside = b.w > 0.0 && b.h > 0.0 && b.x >= 0.0 && b.y >= 0.0 && b.x + b.w <= width + 1e-9 && b.y + b.h <= height + 1e-9;
        if !inside || b.class_id >= spec.num_classes {
            return Err(ModelError::BoxOutOfBounds(format!(
                "({}, {}, {}, {}) class {} in {width}x{height} image",
                b.x, b.y, b.w, b.h, b.class_id
            )));
        }
        let (cx, cy) = (b.x + b.w / 2.0, b.y + b.h / 2.0);
        let gx = cx * s as f64 / width;
        let gy = cy * s as f64 / height;
        let j = (gx.floor() as usize).min(s - 1);
        let i = (gy.floor() as usize).min(s - 1);
        let cell = i * s + j;
        let area = b.w * b.h;
        if owner[cell].is_some_and(|a| a >= area) {
            continue;
        }
        owner[cell] = Some(area);
        let vals = [gx - j as f64, gy - i as f64, b.w / width, b.h / height, 1.0];
        for (ch, v) in vals.into_iter().enumerate() {
            target[ch * plane + cell] = v;
        }
        for c in 0..spec.num_classes {
            target[(5 + c) * plane + cell] = f64::from(c == b.class_id);
        }
    }
    Ok(CellTargets {
        target,
        responsible: owner.iter().map(Option::is_some).collect(),
    })
}

/// Per-element weights `(bce, mse)` for the composite loss of one image.
pub fn loss_weights(spec: &DetectorSpec, responsible: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let plane = responsible.len();
    let k = spec.outputs_per_cell();
    let mut bce = vec![0.0; k * plane];
    let mut mse = vec![0.0; k * plane];
    for (cell, &r) in responsible.iter().enumerate() {
        bce[4 * plane + cell] = if r { 1.0 } else { NOOBJ_WEIGHT };
        if r {
            for ch in 0..4 {
                mse[ch * plane + cell] = BOX_WEIGHT;
            }
            for c in 0..spec.num_classes {
                bce[(5 + c) * plane + cell] = 1.0;
            }
        }
    }
    (bce, mse)
}

/// Decodes raw outputs `[N, 5+C, S, S]` into detections with
/// `score >= conf_threshold`, one list per image.
pub fn decode_predictions(raw: &Tensor, conf_threshold: f64, image_ids: &[String], width: f64, height: f64) -> Result<Vec<Detection>> {
    let [n, k, s, s2] = raw.dims4("decode_predictions")?;
    if k < 6 || s != s2 || image_ids.len() != n {
        return Err(ModelError::Spec(format!(
            "raw output {n}x{k}x{s}x{s2} does not fit {} images",
            image_ids.len()
        )));
    }
    let plane = s * s;
    let data = raw.data();
    let mut out = Vec::new();
    for (img, id) in image_ids.iter().enumerate() {
        let base = img * k * plane;
        let at = |ch: usize, cell: usize| sigmoid(data[base + ch * plane + cell]);
        for cell in 0..plane {
            let (i, j) = (cell / s, cell % s);
            let cx = (j as f64 + at(0, cell)) * width / s as f64;
            let cy = (i as f64 + at(1, cell)) * height / s as f64;
            let bw = width * at(2, cell);
            let bh = height * at(3, cell);
            let Some(bbox) = BBox::from_center(cx, cy, bw, bh).clamp_to(width, height) else {
                continue;
            };
            let obj = at(4, cell);
            for c in 0..k - 5 {
                let score = obj * at(5 + c, cell);
                if score >= conf_threshold {
                    out.push(Detection {
                        image_id: id.clone(),
                        bbox,
                        score,
                        class_id: c,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Greedy non-maximum suppression per image and class; output sorted by
/// descending score (stable for ties).
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Detection> = Vec::new();
    for d in order {
        let suppressed = kept.iter().any(|k| {
            k.image_id == d.image_id && k.class_id == d.class_id && iou(&k.bbox, &d.bbox).unwrap_or(0.0) >= iou_threshold
        });
        if !suppressed {
            kept.push(d.clone());
        }
    }
    kept
}

/// Inverse of the logistic function, for building ideal raw outputs.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
