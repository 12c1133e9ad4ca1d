//! Samples, datasets, augmentation, splitting and the synthetic scene generator.

mod augment;
mod io;
mod sample;
mod split;
mod synth;

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

pub use augment::{add_noise, hflip, resize, warp, WarpParams, ROTATION_RANGE_DEG, SCALE_RANGE, SHEAR_RANGE};
pub use io::{
    dataset_hash, encode_mask, encode_rgb, load_dataset, manifest_bytes, read_manifest, read_mask, read_rgb,
    save_dataset, write_atomic, DatasetManifest, SampleRecord, MANIFEST_FILE,
};
pub use sample::{LabeledBox, Mask, RgbImage, Sample};
pub use split::{parse_ratios, split_dataset, split_sizes, Split, SplitAssignment};
pub use synth::{synth_dataset, synth_scene, Quad, Scene, SceneConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("malformed manifest entry {entry}: {msg}")]
    MalformedManifest { entry: String, msg: String },
    #[error("duplicate sample id {0}")]
    IdCollision(String),
    #[error("sample {id}: {msg}")]
    InvalidSample { id: String, msg: String },
    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    ParameterRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("degenerate transform: determinant {0:e}")]
    DegenerateTransform(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("png: {0}")]
    Png(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Where an augmented sample came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub source: String,
    pub op: String,
}

/// An ordered collection of samples plus its split assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub image_size: usize,
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
    pub splits: Option<SplitAssignment>,
    pub provenance: BTreeMap<String, Provenance>,
}

impl Dataset {
    pub fn new(image_size: usize, samples: Vec<Sample>) -> Self {
        Dataset {
            image_size,
            class_names: vec!["shadow".to_string()],
            samples,
            splits: None,
            provenance: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub(crate) fn check_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(DataError::IdCollision(s.id.clone()));
            }
        }
        Ok(())
    }

    /// Split sets must be disjoint and together cover every sample exactly once.
    pub fn check_splits(&self, splits: &SplitAssignment) -> Result<()> {
        let mut seen = HashSet::new();
        for id in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            if !seen.insert(id.as_str()) {
                return Err(DataError::MalformedManifest {
                    entry: id.clone(),
                    msg: "id appears in more than one split".into(),
                });
            }
            if self.get(id).is_none() {
                return Err(DataError::MalformedManifest {
                    entry: id.clone(),
                    msg: "split references an unknown sample".into(),
                });
            }
        }
        if let Some(s) = self.samples.iter().find(|s| !seen.contains(s.id.as_str())) {
            return Err(DataError::MalformedManifest {
                entry: s.id.clone(),
                msg: "sample is not assigned to any split".into(),
            });
        }
        Ok(())
    }

    /// Samples of one split, in split order. Empty when no split is recorded.
    pub fn part(&self, split: Split) -> Dataset {
        let samples = match &self.splits {
            Some(a) => a.ids(split).iter().filter_map(|id| self.get(id).cloned()).collect(),
            None => Vec::new(),
        };
        let provenance = self
            .provenance
            .iter()
            .filter(|(k, _)| samples.iter().any(|s: &Sample| &s.id == *k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Dataset {
            image_size: self.image_size,
            class_names: self.class_names.clone(),
            samples,
            splits: None,
            provenance,
        }
    }
}
