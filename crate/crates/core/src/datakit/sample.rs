use serde::{Deserialize, Serialize};

use super::{DataError, Result};
use crate::evalkit::{BBox, GroundTruth};

/// Interleaved `H x W x 3` image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Rec. 601 luma.
    pub fn luminance(&self, x: usize, y: usize) -> f64 {
        let [r, g, b] = self.pixel(x, y);
        0.299 * r + 0.587 * g + 0.114 * b
    }

    /// Planar `3 x H x W` copy, the layout the networks consume.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; 3 * plane];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = px[c];
            }
        }
        out
    }

    pub fn from_chw(width: usize, height: usize, chw: &[f64]) -> Self {
        let plane = width * height;
        let mut img = RgbImage::new(width, height);
        for p in 0..plane {
            for c in 0..3 {
                img.data[p * 3 + c] = chw[c * plane + p];
            }
        }
        img
    }

    /// Rounds every channel to the nearest multiple of 1/255.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }
}

/// Binary `H x W` mask, 1 = shadow.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Labelled box in absolute pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub class_id: usize,
}

impl LabeledBox {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.x, self.y, self.w, self.h)
    }

    pub fn from_bbox(b: BBox, class_id: usize) -> Self {
        LabeledBox {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
            class_id,
        }
    }
}

/// One scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub mask: Option<Mask>,
    pub boxes: Vec<LabeledBox>,
    pub shadow_free: Option<RgbImage>,
}

impl Sample {
    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn ground_truths(&self) -> Vec<GroundTruth> {
        self.boxes
            .iter()
            .map(|b| GroundTruth {
                image_id: self.id.clone(),
                bbox: b.bbox(),
                class_id: b.class_id,
            })
            .collect()
    }

    /// Checks image range, mask dims/values, paired image dims and box bounds.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| DataError::InvalidSample {
            id: self.id.clone(),
            msg,
        };
        let (w, h) = (self.width(), self.height());
        if self.image.data.len() != w * h * 3 {
            return Err(bad("image buffer does not match its dimensions".into()));
        }
        if self.image.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(bad("image values outside [0, 1]".into()));
        }
        if let Some(m) = &self.mask {
            if (m.width, m.height) != (w, h) || m.data.len() != w * h {
                return Err(bad(format!("mask is {}x{}, image is {w}x{h}", m.width, m.height)));
            }
            if m.data.iter().any(|&v| v > 1) {
                return Err(bad("mask values must be 0 or 1".into()));
            }
        }
        if let Some(sf) = &self.shadow_free {
            if (sf.width, sf.height) != (w, h) {
                return Err(bad("shadow-free image dims differ from image".into()));
            }
        }
        for b in &self.boxes {
            let inside = b.x >= 0.0 && b.y >= 0.0 && b.x + b.w <= w as f64 + 1e-9 && b.y + b.h <= h as f64 + 1e-9;
            if !(b.w > 0.0 && b.h > 0.0) || !inside {
                return Err(bad(format!("box {b:?} is empty or leaves the {w}x{h} image")));
            }
        }
        Ok(())
    }
}
