use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Sample ids per split, each list in shuffled order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .find(|&s| self.ids(s).iter().any(|x| x == id))
    }
}

/// Partition sizes: `round(n·rᵢ/Σr)` for val and test, remainder to train.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    let total = ratios.0 + ratios.1 + ratios.2;
    let part = |r: f64| ((n as f64) * r / total).round() as usize;
    let val = part(ratios.1).min(n);
    let test = part(ratios.2).min(n - val);
    (n - val - test, val, test)
}

/// Seeded shuffle then contiguous train / val / test partition.
pub fn split_dataset(ds: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<SplitAssignment> {
    if ds.samples.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    if ![ratios.0, ratios.1, ratios.2].iter().all(|r| r.is_finite() && *r > 0.0) {
        return Err(DataError::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let mut ids: Vec<String> = ds.samples.iter().map(|s| s.id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (ntrain, nval, _) = split_sizes(ids.len(), ratios);
    let test = ids.split_off(ntrain + nval);
    let val = ids.split_off(ntrain);
    Ok(SplitAssignment { train: ids, val, test })
}

/// Parses `8:1:1`.
pub fn parse_ratios(text: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| DataError::Config(format!("ratios must look like 8:1:1, got {text:?}")))?;
    match parts.as_slice() {
        &[a, b, c] if a > 0.0 && b > 0.0 && c > 0.0 => Ok((a, b, c)),
        _ => Err(DataError::Config(format!("ratios must be three positive numbers, got {text:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_follow_rounding_rule() {
        assert_eq!(split_sizes(250, (8.0, 1.0, 1.0)), (200, 25, 25));
        assert_eq!(split_sizes(10, (8.0, 1.0, 1.0)), (8, 1, 1));
        assert_eq!(split_sizes(1, (8.0, 1.0, 1.0)), (1, 0, 0));
        assert_eq!(split_sizes(2, (1.0, 2.0, 2.0)), (0, 1, 1));
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!(parse_ratios("8:1:1").unwrap(), (8.0, 1.0, 1.0));
        assert!(parse_ratios("8:1").is_err());
        assert!(parse_ratios("8:0:1").is_err());
    }
}
