//! GAN shadow attenuator: an encoder-decoder generator emitting an
//! attenuation mask and a stride-2 convolutional discriminator.

use serde::{Deserialize, Serialize};

use super::encdec::EncDecSpec;
use super::network::{NetBuilder, Network};
use super::{ModelError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanSpec {
    pub generator: EncDecSpec,
    /// Application gain `g` of the attenuation mask.
    pub gain: f64,
    /// Weight of the `mean(M)` sparsity term in the generator loss.
    pub lambda: f64,
    pub disc_channels: Vec<usize>,
    pub slope: f64,
}

impl Default for GanSpec {
    fn default() -> Self {
        GanSpec {
            generator: EncDecSpec::default(),
            gain: 1.0,
            lambda: 0.1,
            disc_channels: vec![16, 32, 64],
            slope: 0.1,
        }
    }
}

impl GanSpec {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if !(0.0..=1.0).contains(&self.gain) {
            return Err(ModelError::Spec(format!("gain must lie in [0, 1], got {}", self.gain)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ModelError::Spec(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.disc_channels.is_empty() || self.disc_channels.contains(&0) {
            return Err(ModelError::Spec("discriminator ladder must be non-empty with positive widths".into()));
        }
        Ok(())
    }

    pub fn generator_network(&self) -> Result<Network> {
        self.generator.network()
    }

    /// `[conv3x3 stride 2 -> leaky ReLU]*` then flatten, one linear unit and a sigmoid.
    pub fn discriminator_network(&self) -> Result<Network> {
        self.validate()?;
        let n = self.generator.input_size;
        let gain = (2.0 / (1.0 + self.slope * self.slope)).sqrt();
        let mut b = NetBuilder::new([3, n, n]);
        for (i, &c) in self.disc_channels.iter().enumerate() {
            b = b.conv(&format!("disc{i}"), c, 3, 2, 1, gain)?.leaky(&format!("disc{i}.act"), self.slope);
        }
        Ok(b.flatten("flatten").linear("fc", 1, 1.0)?.sigmoid("fc.act").build())
    }
}
