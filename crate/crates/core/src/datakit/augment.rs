//! Label-aware augmentations: horizontal flip, affine warp, Gaussian noise
//! and resizing. Each one transforms the image, the mask, the boxes and the
//! paired shadow-free image consistently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sample::{LabeledBox, Mask, RgbImage, Sample};
use super::{DataError, Result};
use crate::evalkit::BBox;

pub const ROTATION_RANGE_DEG: (f64, f64) = (-10.0, 10.0);
pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);
pub const SHEAR_RANGE: (f64, f64) = (-0.1, 0.1);

fn flip_image(img: &RgbImage) -> RgbImage {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..3 {
                out.set(img.width - 1 - x, y, c, img.get(x, y, c));
            }
        }
    }
    out
}

/// Mirrors the sample left-right.
pub fn hflip(s: &Sample) -> Sample {
    let w = s.width() as f64;
    let mask = s.mask.as_ref().map(|m| {
        let mut out = m.clone();
        for y in 0..m.height {
            for x in 0..m.width {
                out.set(m.width - 1 - x, y, m.get(x, y));
            }
        }
        out
    });
    Sample {
        id: s.id.clone(),
        image: flip_image(&s.image),
        mask,
        boxes: s.boxes.iter().map(|b| LabeledBox { x: w - b.x - b.w, ..*b }).collect(),
        shadow_free: s.shadow_free.as_ref().map(flip_image),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpParams {
    pub rotation_deg: f64,
    pub scale: f64,
    pub shear: f64,
}

impl WarpParams {
    pub const IDENTITY: WarpParams = WarpParams {
        rotation_deg: 0.0,
        scale: 1.0,
        shear: 0.0,
    };

    /// Uniform draw from the supported ranges.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        WarpParams {
            rotation_deg: rng.random_range(ROTATION_RANGE_DEG.0..=ROTATION_RANGE_DEG.1),
            scale: rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1),
            shear: rng.random_range(SHEAR_RANGE.0..=SHEAR_RANGE.1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &'static str, v: f64, (lo, hi): (f64, f64)| {
            if v.is_finite() && (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(DataError::ParameterRange { name, value: v, lo, hi })
            }
        };
        check("rotation_deg", self.rotation_deg, ROTATION_RANGE_DEG)?;
        check("scale", self.scale, SCALE_RANGE)?;
        check("shear", self.shear, SHEAR_RANGE)
    }

    /// Forward linear part `scale · R(θ) · [[1, shear], [0, 1]]`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let k = self.scale;
        [[k * c, k * (c * self.shear - s)], [k * s, k * (s * self.shear + c)]]
    }
}

fn invert(m: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-6 {
        return Err(DataError::DegenerateTransform(det));
    }
    Ok([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

/// Bilinear sample at continuous pixel coordinates (centres at `i + 0.5`),
/// replicating edge pixels.
fn bilinear(img: &RgbImage, sx: f64, sy: f64, c: usize) -> f64 {
    let (u, v) = (sx - 0.5, sy - 0.5);
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (u - x0, v - y0);
    let clampx = |x: f64| x.clamp(0.0, (img.width - 1) as f64) as usize;
    let clampy = |y: f64| y.clamp(0.0, (img.height - 1) as f64) as usize;
    let (xa, xb, ya, yb) = (clampx(x0), clampx(x0 + 1.0), clampy(y0), clampy(y0 + 1.0));
    let top = img.get(xa, ya, c) * (1.0 - fx) + img.get(xb, ya, c) * fx;
    let bottom = img.get(xa, yb, c) * (1.0 - fx) + img.get(xb, yb, c) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn nearest(mask: &Mask, sx: f64, sy: f64) -> u8 {
    let x = sx.floor().clamp(0.0, (mask.width - 1) as f64) as usize;
    let y = sy.floor().clamp(0.0, (mask.height - 1) as f64) as usize;
    mask.get(x, y)
}

/// Resamples through `src_of(out_x_centre, out_y_centre) -> (src_x, src_y)`.
fn resample_image(img: &RgbImage, width: usize, height: usize, src_of: &impl Fn(f64, f64) -> (f64, f64)) -> RgbImage {
    let mut out = RgbImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = src_of(x as f64 + 0.5, y as f64 + 0.5);
            for c in 0..3 {
                out.set(x, y, c, bilinear(img, sx, sy, c).clamp(0.0, 1.0));
            }
        }
    }
    out
}

fn resample_mask(mask: &Mask, width: usize, height: usize, src_of: &impl Fn(f64, f64) -> (f64, f64)) -> Mask {
    let mut out = Mask::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = src_of(x as f64 + 0.5, y as f64 + 0.5);
            out.set(x, y, nearest(mask, sx, sy));
        }
    }
    out
}

/// Affine warp about the image centre. Boxes become the axis-aligned hull of
/// their warped corners, clamped to the image; boxes warped fully outside are dropped.
pub fn warp(s: &Sample, params: &WarpParams) -> Result<Sample> {
    params.validate()?;
    let fwd = params.matrix();
    let inv = invert(fwd)?;
    let (w, h) = (s.width(), s.height());
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let src_of = |x: f64, y: f64| {
        let (dx, dy) = (x - cx, y - cy);
        (inv[0][0] * dx + inv[0][1] * dy + cx, inv[1][0] * dx + inv[1][1] * dy + cy)
    };
    let boxes = s
        .boxes
        .iter()
        .filter_map(|b| {
            let corners = [(b.x, b.y), (b.x + b.w, b.y), (b.x, b.y + b.h), (b.x + b.w, b.y + b.h)];
            let pts: Vec<(f64, f64)> = corners
                .iter()
                .map(|&(x, y)| {
                    let (dx, dy) = (x - cx, y - cy);
                    (fwd[0][0] * dx + fwd[0][1] * dy + cx, fwd[1][0] * dx + fwd[1][1] * dy + cy)
                })
                .collect();
            let x0 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let x1 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            let y0 = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let y1 = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            BBox::new(x0, y0, x1 - x0, y1 - y0)
                .clamp_to(w as f64, h as f64)
                .map(|bb| LabeledBox::from_bbox(bb, b.class_id))
        })
        .collect();
    Ok(Sample {
        id: s.id.clone(),
        image: resample_image(&s.image, w, h, &src_of),
        mask: s.mask.as_ref().map(|m| resample_mask(m, w, h, &src_of)),
        boxes,
        shadow_free: s.shadow_free.as_ref().map(|i| resample_image(i, w, h, &src_of)),
    })
}

/// Adds `N(0, sigma)` to every image channel, clamped to `[0, 1]`.
pub fn add_noise(s: &Sample, sigma: f64, seed: u64) -> Result<Sample> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(DataError::ParameterRange {
            name: "sigma",
            value: sigma,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    let mut out = s.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut out.image.data {
        *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Resizes to `target x target`: bilinear image, nearest-neighbour mask, scaled boxes.
pub fn resize(s: &Sample, target: usize) -> Result<Sample> {
    if target < 8 {
        return Err(DataError::Config(format!("resize target must be at least 8, got {target}")));
    }
    let (w, h) = (s.width(), s.height());
    if (w, h) == (target, target) {
        return Ok(s.clone());
    }
    let (fx, fy) = (w as f64 / target as f64, h as f64 / target as f64);
    let src_of = |x: f64, y: f64| (x * fx, y * fy);
    Ok(Sample {
        id: s.id.clone(),
        image: resample_image(&s.image, target, target, &src_of),
        mask: s.mask.as_ref().map(|m| resample_mask(m, target, target, &src_of)),
        boxes: s
            .boxes
            .iter()
            .map(|b| LabeledBox {
                x: b.x / fx,
                y: b.y / fy,
                w: b.w / fx,
                h: b.h / fy,
                class_id: b.class_id,
            })
            .collect(),
        shadow_free: s.shadow_free.as_ref().map(|i| resample_image(i, target, target, &src_of)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Sample {
        let mut image = RgbImage::new(64, 64);
        for (i, v) in image.data.iter_mut().enumerate() {
            *v = ((i * 37) % 256) as f64 / 255.0;
        }
        let mut mask = Mask::new(64, 64);
        for y in 5..15 {
            for x in 10..30 {
                mask.set(x, y, 1);
            }
        }
        Sample {
            id: "s".into(),
            image,
            mask: Some(mask),
            boxes: vec![LabeledBox {
                x: 10.0,
                y: 5.0,
                w: 20.0,
                h: 10.0,
                class_id: 0,
            }],
            shadow_free: None,
        }
    }

    #[test]
    fn flip_box_arithmetic_and_involution() {
        let s = sample();
        let f = hflip(&s);
        assert_eq!(f.boxes[0].x, 34.0);
        assert_eq!((f.boxes[0].y, f.boxes[0].w, f.boxes[0].h), (5.0, 20.0, 10.0));
        assert_eq!(f.mask.as_ref().unwrap().count(), s.mask.as_ref().unwrap().count());
        assert_eq!(hflip(&f), s);
    }

    #[test]
    fn identity_warp_is_exact() {
        let s = sample();
        assert_eq!(warp(&s, &WarpParams::IDENTITY).unwrap(), s);
    }

    #[test]
    fn out_of_range_rotation_rejected() {
        let p = WarpParams {
            rotation_deg: 90.0,
            ..WarpParams::IDENTITY
        };
        assert!(matches!(warp(&sample(), &p), Err(DataError::ParameterRange { name: "rotation_deg", .. })));
    }

    #[test]
    fn degenerate_matrix_rejected() {
        assert!(matches!(invert([[1.0, 2.0], [2.0, 4.0]]), Err(DataError::DegenerateTransform(_))));
    }

    #[test]
    fn zero_noise_is_identity_and_seeded_noise_repeats() {
        let s = sample();
        assert_eq!(add_noise(&s, 0.0, 1).unwrap(), s);
        assert_eq!(add_noise(&s, 0.05, 9).unwrap(), add_noise(&s, 0.05, 9).unwrap());
        assert_ne!(add_noise(&s, 0.05, 9).unwrap(), add_noise(&s, 0.05, 10).unwrap());
        assert!(add_noise(&s, -1.0, 0).is_err());
    }

    #[test]
    fn resize_scales_boxes() {
        let s = sample();
        assert_eq!(resize(&s, 64).unwrap(), s);
        let r = resize(&s, 32).unwrap();
        assert_eq!(r.boxes[0], LabeledBox { x: 5.0, y: 2.5, w: 10.0, h: 5.0, class_id: 0 });
        assert_eq!((r.width(), r.height()), (32, 32));
        assert!(resize(&s, 4).is_err());
    }
}
