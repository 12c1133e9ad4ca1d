//! On-disk dataset format: `dataset.json` plus `images/`, `masks/` and
//! `shadowfree/` PNG directories, all paths relative to the manifest.
//!
//! Images are 8-bit RGB, masks 8-bit grayscale with 0 = background and
//! 255 = shadow. Float images are quantized to 1/255 steps when written.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sample::{LabeledBox, Mask, RgbImage, Sample};
use super::split::SplitAssignment;
use super::{DataError, Dataset, Provenance, Result};

pub const MANIFEST_FILE: &str = "dataset.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub image: String,
    pub mask: Option<String>,
    pub shadow_free: Option<String>,
    pub boxes: Vec<LabeledBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub image_size: usize,
    pub class_names: Vec<String>,
    pub samples: Vec<SampleRecord>,
    pub splits: Option<SplitAssignment>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| DataError::Png(e.to_string()))?;
        w.write_image_data(data).map_err(|e| DataError::Png(e.to_string()))?;
    }
    Ok(buf)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_rgb(img: &RgbImage) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
    encode_png(img.width, img.height, png::ColorType::Rgb, &bytes)
}

pub fn encode_mask(mask: &Mask) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = mask.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    encode_png(mask.width, mask.height, png::ColorType::Grayscale, &bytes)
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<(usize, usize, png::ColorType, Vec<u8>)> {
    let err = |e: png::DecodingError| DataError::Png(format!("{}: {e}", path.display()));
    let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| DataError::Png(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(err)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(DataError::Png(format!("{}: expected 8-bit samples", path.display())));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, info.color_type, buf))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.display().to_string()));
    }
    fs::read(path).map_err(|e| io_err(path, e))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let (w, h, color, buf) = decode_png(&read_file(path)?, path)?;
    if color != png::ColorType::Rgb {
        return Err(DataError::Png(format!("{}: expected RGB, got {color:?}", path.display())));
    }
    Ok(RgbImage {
        width: w,
        height: h,
        data: buf.iter().map(|&b| f64::from(b) / 255.0).collect(),
    })
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let (w, h, color, buf) = decode_png(&read_file(path)?, path)?;
    if color != png::ColorType::Grayscale {
        return Err(DataError::Png(format!("{}: expected grayscale, got {color:?}", path.display())));
    }
    Ok(Mask {
        width: w,
        height: h,
        data: buf.iter().map(|&b| u8::from(b >= 128)).collect(),
    })
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(DataError::MalformedManifest {
            entry: id.to_string(),
            msg: "sample ids may only use ASCII letters, digits, '_', '-' and '.'".into(),
        })
    }
}

impl Dataset {
    /// Manifest describing this dataset with the default file layout.
    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            version: MANIFEST_VERSION,
            image_size: self.image_size,
            class_names: self.class_names.clone(),
            samples: self
                .samples
                .iter()
                .map(|s| {
                    let prov = self.provenance.get(&s.id);
                    SampleRecord {
                        id: s.id.clone(),
                        image: format!("images/{}.png", s.id),
                        mask: s.mask.as_ref().map(|_| format!("masks/{}.png", s.id)),
                        shadow_free: s.shadow_free.as_ref().map(|_| format!("shadowfree/{}.png", s.id)),
                        boxes: s.boxes.clone(),
                        source: prov.map(|p| p.source.clone()),
                        augmentation: prov.map(|p| p.op.clone()),
                    }
                })
                .collect(),
            splits: self.splits.clone(),
        }
    }
}

pub fn manifest_bytes(manifest: &DatasetManifest) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    bytes.push(b'\n');
    bytes
}

/// Writes every sample and then the manifest into `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.check_ids()?;
    for s in &ds.samples {
        check_id(&s.id)?;
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let manifest = ds.manifest();
    for (s, rec) in ds.samples.iter().zip(&manifest.samples) {
        write_atomic(&dir.join(&rec.image), &encode_rgb(&s.image)?)?;
        if let (Some(m), Some(p)) = (&s.mask, &rec.mask) {
            write_atomic(&dir.join(p), &encode_mask(m)?)?;
        }
        if let (Some(sf), Some(p)) = (&s.shadow_free, &rec.shadow_free) {
            write_atomic(&dir.join(p), &encode_rgb(sf)?)?;
        }
    }
    write_atomic(&dir.join(MANIFEST_FILE), &manifest_bytes(&manifest))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = read_file(&path)?;
    let manifest: DatasetManifest = serde_json::from_slice(&text).map_err(|e| DataError::MalformedManifest {
        entry: path.display().to_string(),
        msg: e.to_string(),
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(DataError::MalformedManifest {
            entry: path.display().to_string(),
            msg: format!("unsupported version {}", manifest.version),
        });
    }
    Ok(manifest)
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let mut seen = HashSet::new();
    let mut samples = Vec::with_capacity(manifest.samples.len());
    let mut provenance = BTreeMap::new();
    for rec in &manifest.samples {
        check_id(&rec.id)?;
        if !seen.insert(rec.id.clone()) {
            return Err(DataError::IdCollision(rec.id.clone()));
        }
        let image = read_rgb(&dir.join(&rec.image))?;
        let mask = rec.mask.as_ref().map(|p| read_mask(&dir.join(p))).transpose()?;
        let shadow_free = rec.shadow_free.as_ref().map(|p| read_rgb(&dir.join(p))).transpose()?;
        let sample = Sample {
            id: rec.id.clone(),
            image,
            mask,
            boxes: rec.boxes.clone(),
            shadow_free,
        };
        sample.validate()?;
        if let (Some(source), Some(op)) = (&rec.source, &rec.augmentation) {
            provenance.insert(
                rec.id.clone(),
                Provenance {
                    source: source.clone(),
                    op: op.clone(),
                },
            );
        }
        samples.push(sample);
    }
    let ds = Dataset {
        image_size: manifest.image_size,
        class_names: manifest.class_names,
        samples,
        splits: manifest.splits,
        provenance,
    };
    if let Some(splits) = &ds.splits {
        ds.check_splits(splits)?;
    }
    Ok(ds)
}

/// SHA-256 over the manifest and every file it references, in manifest order.
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let manifest = read_manifest(dir)?;
    let mut hasher = Sha256::new();
    hasher.update(read_file(&dir.join(MANIFEST_FILE))?);
    for rec in &manifest.samples {
        let files = std::iter::once(&rec.image).chain(rec.mask.iter()).chain(rec.shadow_free.iter());
        for f in files {
            hasher.update(f.as_bytes());
            hasher.update(read_file(&dir.join(f))?);
        }
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
