//! Encoder-decoder mask network.
//!
//! Encoder stages are `conv3x3 -> leaky ReLU`, each but the last followed by
//! a 2x max-pool. The decoder mirrors the ladder: `upsample -> conv3x3 ->
//! leaky ReLU` per stage, then a 1x1 convolution to one channel and a sigmoid.

use serde::{Deserialize, Serialize};

use super::network::{NetBuilder, Network};
use super::{ModelError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncDecSpec {
    pub input_size: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub slope: f64,
}

impl Default for EncDecSpec {
    fn default() -> Self {
        EncDecSpec {
            input_size: 64,
            channels: vec![16, 32, 64, 128],
            kernel: 3,
            slope: 0.1,
        }
    }
}

impl EncDecSpec {
    pub fn validate(&self) -> Result<()> {
        let stages = self.channels.len();
        if stages == 0 || self.channels.contains(&0) {
            return Err(ModelError::Spec("encoder ladder must be non-empty with positive widths".into()));
        }
        if self.channels.last() != Some(&128) {
            return Err(ModelError::Spec(format!(
                "last encoder stage must have 128 filters, got {:?}",
                self.channels
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(ModelError::Spec("kernel size must be odd".into()));
        }
        let div = 1usize << (stages - 1);
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(ModelError::Spec(format!(
                "input size {} must be divisible by {div}",
                self.input_size
            )));
        }
        Ok(())
    }

    pub fn network(&self) -> Result<Network> {
        self.validate()?;
        let (k, pad, slope) = (self.kernel, self.kernel / 2, self.slope);
        let gain = (2.0 / (1.0 + slope * slope)).sqrt();
        let mut b = NetBuilder::new([3, self.input_size, self.input_size]);
        let last = self.channels.len() - 1;
        for (i, &c) in self.channels.iter().enumerate() {
            b = b.conv(&format!("enc{i}"), c, k, 1, pad, gain)?.leaky(&format!("enc{i}.act"), slope);
            if i < last {
                b = b.maxpool(&format!("pool{i}"))?;
            }
        }
        for (i, &c) in self.channels[..last].iter().enumerate().rev() {
            b = b
                .upsample(&format!("up{i}"))?
                .conv(&format!("dec{i}"), c, k, 1, pad, gain)?
                .leaky(&format!("dec{i}.act"), slope);
        }
        Ok(b.conv("head", 1, 1, 1, 0, 1.0)?.sigmoid("head.act").build())
    }
}
