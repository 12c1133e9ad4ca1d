//! Operation counts for one forward pass of a single input.
//!
//! A multiply-add counts as two operations. Convolutions and linear layers
//! add one operation per output for the bias; activations, pooling and
//! upsampling cost one operation per output element.

use serde::{Deserialize, Serialize};

/// Layer kinds that appear in the model layer tables.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        kernel: usize,
        stride: usize,
        pad: usize,
        in_channels: usize,
        out_channels: usize,
        bias: bool,
    },
    ConvTranspose2d {
        kernel: usize,
        stride: usize,
        pad: usize,
        in_channels: usize,
        out_channels: usize,
    },
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    UpsampleNearest2x,
    LeakyRelu,
    Sigmoid,
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::ConvTranspose2d { .. } => "conv_transpose2d",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::UpsampleNearest2x => "upsample_nearest2x",
            LayerKind::LeakyRelu => "leaky_relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Flatten => "flatten",
            LayerKind::Linear { .. } => "linear",
        }
    }
}

/// One row of a model's layer table; shapes exclude the batch dimension.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub kind: LayerKind,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub params: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub name: String,
    pub kind: String,
    pub output: Vec<usize>,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub total: u64,
    pub layers: Vec<LayerFlops>,
}

pub fn layer_flops(layer: &LayerDesc) -> u64 {
    let out: u64 = layer.output.iter().product::<usize>() as u64;
    match &layer.kind {
        LayerKind::Conv2d {
            kernel,
            in_channels,
            bias,
            ..
        } => {
            // out = Cout·Hout·Wout
            let k2 = (kernel * kernel) as u64;
            2 * k2 * *in_channels as u64 * out + if *bias { out } else { 0 }
        }
        LayerKind::ConvTranspose2d {
            kernel, out_channels, ..
        } => {
            let inputs: u64 = layer.input.iter().product::<usize>() as u64;
            2 * (kernel * kernel) as u64 * *out_channels as u64 * inputs
        }
        LayerKind::Linear {
            in_features,
            out_features,
            bias,
        } => 2 * (*in_features as u64) * (*out_features as u64) + if *bias { *out_features as u64 } else { 0 },
        LayerKind::MaxPool2d { .. } | LayerKind::UpsampleNearest2x | LayerKind::LeakyRelu | LayerKind::Sigmoid => out,
        LayerKind::Flatten => 0,
    }
}

pub fn flops(layers: &[LayerDesc]) -> FlopsReport {
    let rows: Vec<LayerFlops> = layers
        .iter()
        .map(|l| LayerFlops {
            name: l.name.clone(),
            kind: l.kind.label().to_string(),
            output: l.output.clone(),
            flops: layer_flops(l),
        })
        .collect();
    FlopsReport {
        total: rows.iter().map(|r| r.flops).sum(),
        layers: rows,
    }
}

impl FlopsReport {
    /// Plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<24} {:<20} {:<16} {:>16}\n", "layer", "kind", "output", "flops");
        for l in &self.layers {
            let shape = l.output.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            s.push_str(&format!("{:<24} {:<20} {:<16} {:>16}\n", l.name, l.kind, shape, l.flops));
        }
        s.push_str(&format!("{:<24} {:<20} {:<16} {:>16}\n", "total", "", "", self.total));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv() {
        let l = LayerDesc {
            name: "conv".into(),
            kind: LayerKind::Conv2d {
                kernel: 3,
                stride: 1,
                pad: 1,
                in_channels: 3,
                out_channels: 16,
                bias: true,
            },
            input: vec![3, 64, 64],
            output: vec![16, 64, 64],
            params: vec![vec![16, 3, 3, 3], vec![16]],
        };
        assert_eq!(layer_flops(&l), 3_538_944 + 65_536);
        assert_eq!(flops(&[l]).total, 3_604_480);
    }

    #[test]
    fn single_linear() {
        let l = LayerDesc {
            name: "fc".into(),
            kind: LayerKind::Linear {
                in_features: 4096,
                out_features: 1,
                bias: true,
            },
            input: vec![4096],
            output: vec![1],
            params: vec![vec![4096, 1], vec![1]],
        };
        assert_eq!(layer_flops(&l), 8_193);
    }
}
