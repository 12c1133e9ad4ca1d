//! Sequential layer graphs, their parameters and layer tables.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::evalkit::{LayerDesc, LayerKind};
use crate::tensorcore::{estimate_memory, Result, Tape, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv {
        weight: usize,
        bias: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool,
    Upsample,
    LeakyRelu(f64),
    Sigmoid,
    Flatten,
    Linear {
        weight: usize,
        bias: usize,
    },
}

/// How a parameter tensor is initialised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    Scaled { fan_in: usize, gain: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// A layer sequence with known per-sample input shape `[C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub input: Vec<usize>,
    pub layers: Vec<(String, Layer)>,
    pub slots: Vec<ParamSlot>,
    shapes: Vec<Vec<usize>>,
}

/// Named parameter tensors in network order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

fn spec_error(msg: String) -> TensorError {
    TensorError::InvalidArgument {
        op: "network",
        msg,
    }
}

/// Incrementally assembles a [`Network`], tracking the activation shape.
pub struct NetBuilder {
    net: Network,
}

impl NetBuilder {
    pub fn new(input: [usize; 3]) -> Self {
        NetBuilder {
            net: Network {
                input: input.to_vec(),
                layers: Vec::new(),
                slots: Vec::new(),
                shapes: Vec::new(),
            },
        }
    }

    fn current(&self) -> &[usize] {
        self.net.shapes.last().unwrap_or(&self.net.input)
    }

    fn slot(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.net.slots.push(ParamSlot { name, shape, init });
        self.net.slots.len() - 1
    }

    fn push(&mut self, name: String, layer: Layer, out: Vec<usize>) {
        self.net.layers.push((name, layer));
        self.net.shapes.push(out);
    }

    pub fn conv(mut self, name: &str, out_channels: usize, kernel: usize, stride: usize, pad: usize, gain: f64) -> Result<Self> {
        let &[c, h, w] = self.current() else {
            return Err(spec_error(format!("{name}: conv needs a C x H x W input")));
        };
        if kernel == 0 || stride == 0 || h + 2 * pad < kernel || w + 2 * pad < kernel {
            return Err(spec_error(format!("{name}: kernel {kernel} does not fit {h}x{w} with pad {pad}")));
        }
        let fan_in = c * kernel * kernel;
        let weight = self.slot(format!("{name}.weight"), vec![out_channels, c, kernel, kernel], Init::Scaled { fan_in, gain });
        let bias = self.slot(format!("{name}.bias"), vec![out_channels], Init::Zeros);
        let out = vec![out_channels, (h + 2 * pad - kernel) / stride + 1, (w + 2 * pad - kernel) / stride + 1];
        let layer = Layer::Conv {
            weight,
            bias,
            kernel,
            stride,
            pad,
        };
        self.push(name.to_string(), layer, out);
        Ok(self)
    }

    pub fn leaky(mut self, name: &str, slope: f64) -> Self {
        let out = self.current().to_vec();
        self.push(name.to_string(), Layer::LeakyRelu(slope), out);
        self
    }

    pub fn sigmoid(mut self, name: &str) -> Self {
        let out = self.current().to_vec();
        self.push(name.to_string(), Layer::Sigmoid, out);
        self
    }

    pub fn maxpool(mut self, name: &str) -> Result<Self> {
        let &[c, h, w] = self.current() else {
            return Err(spec_error(format!("{name}: maxpool needs a C x H x W input")));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(spec_error(format!("{name}: {h}x{w} is not divisible by 2")));
        }
        self.push(name.to_string(), Layer::MaxPool, vec![c, h / 2, w / 2]);
        Ok(self)
    }

    pub fn upsample(mut self, name: &str) -> Result<Self> {
        let &[c, h, w] = self.current() else {
            return Err(spec_error(format!("{name}: upsample needs a C x H x W input")));
        };
        self.push(name.to_string(), Layer::Upsample, vec![c, 2 * h, 2 * w]);
        Ok(self)
    }

    pub fn flatten(mut self, name: &str) -> Self {
        let n = self.current().iter().product();
        self.push(name.to_string(), Layer::Flatten, vec![n]);
        self
    }

    pub fn linear(mut self, name: &str, out_features: usize, gain: f64) -> Result<Self> {
        let &[f] = self.current() else {
            return Err(spec_error(format!("{name}: linear needs a flat input")));
        };
        let weight = self.slot(format!("{name}.weight"), vec![f, out_features], Init::Scaled { fan_in: f, gain });
        let bias = self.slot(format!("{name}.bias"), vec![out_features], Init::Zeros);
        self.push(name.to_string(), Layer::Linear { weight, bias }, vec![out_features]);
        Ok(self)
    }

    pub fn build(self) -> Network {
        self.net
    }
}

impl Network {
    /// Per-sample output shape.
    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap_or(&self.input)
    }

    /// Seeded initial parameters.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = self
            .slots
            .iter()
            .map(|s| match s.init {
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Scaled { fan_in, gain } => {
                    let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("finite std");
                    Tensor::from_fn(&s.shape, |_| normal.sample(&mut rng))
                }
            })
            .collect();
        ParamSet {
            names: self.slots.iter().map(|s| s.name.clone()).collect(),
            tensors,
        }
    }

    /// Parameters with every value set to zero.
    pub fn zero_params(&self) -> ParamSet {
        ParamSet {
            names: self.slots.iter().map(|s| s.name.clone()).collect(),
            tensors: self.slots.iter().map(|s| Tensor::zeros(&s.shape)).collect(),
        }
    }

    /// Checks that `params` has one tensor per slot with the slot's shape.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        if params.tensors.len() != self.slots.len() {
            return Err(TensorError::ShapeMismatch {
                op: "parameters",
                expected: format!("{} tensors", self.slots.len()),
                actual: format!("{} tensors", params.tensors.len()),
            });
        }
        for (slot, t) in self.slots.iter().zip(&params.tensors) {
            if t.shape() != slot.shape.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "parameters",
                    expected: format!("{} {}", slot.name, crate::tensorcore::fmt_shape(&slot.shape)),
                    actual: crate::tensorcore::fmt_shape(t.shape()),
                });
            }
        }
        Ok(())
    }

    /// Records the forward pass of a `[N, C, H, W]` (or `[N, F]`) input.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let expected: Vec<usize> = std::iter::once(tape.shape(x)[0]).chain(self.input.iter().copied()).collect();
        if tape.shape(x) != expected.as_slice() {
            return Err(TensorError::ShapeMismatch {
                op: "network input",
                expected: crate::tensorcore::fmt_shape(&expected),
                actual: crate::tensorcore::fmt_shape(tape.shape(x)),
            });
        }
        let mut h = x;
        for (_, layer) in &self.layers {
            h = match *layer {
                Layer::Conv {
                    weight,
                    bias,
                    stride,
                    pad,
                    ..
                } => tape.conv2d(h, params[weight], params[bias], stride, pad)?,
                Layer::MaxPool => tape.maxpool2d(h, 2, 2)?,
                Layer::Upsample => tape.upsample_nearest2x(h)?,
                Layer::LeakyRelu(slope) => tape.leaky_relu(h, slope)?,
                Layer::Sigmoid => tape.sigmoid(h)?,
                Layer::Flatten => tape.flatten(h)?,
                Layer::Linear { weight, bias } => tape.linear(h, params[weight], params[bias])?,
            };
        }
        Ok(h)
    }

    /// One row per layer with per-sample shapes.
    pub fn layer_table(&self, prefix: &str) -> Vec<LayerDesc> {
        let mut input = self.input.clone();
        let mut rows = Vec::with_capacity(self.layers.len());
        for ((name, layer), out) in self.layers.iter().zip(&self.shapes) {
            let (kind, params) = match *layer {
                Layer::Conv {
                    weight,
                    bias,
                    kernel,
                    stride,
                    pad,
                } => (
                    LayerKind::Conv2d {
                        kernel,
                        stride,
                        pad,
                        in_channels: input[0],
                        out_channels: out[0],
                        bias: true,
                    },
                    vec![self.slots[weight].shape.clone(), self.slots[bias].shape.clone()],
                ),
                Layer::Linear { weight, bias } => (
                    LayerKind::Linear {
                        in_features: input[0],
                        out_features: out[0],
                        bias: true,
                    },
                    vec![self.slots[weight].shape.clone(), self.slots[bias].shape.clone()],
                ),
                Layer::MaxPool => (LayerKind::MaxPool2d { kernel: 2, stride: 2 }, vec![]),
                Layer::Upsample => (LayerKind::UpsampleNearest2x, vec![]),
                Layer::LeakyRelu(_) => (LayerKind::LeakyRelu, vec![]),
                Layer::Sigmoid => (LayerKind::Sigmoid, vec![]),
                Layer::Flatten => (LayerKind::Flatten, vec![]),
            };
            rows.push(LayerDesc {
                name: format!("{prefix}{name}"),
                kind,
                input: input.clone(),
                output: out.clone(),
                params,
            });
            input = out.clone();
        }
        rows
    }
}

/// Bytes for one training step: the batched input, every layer output,
/// and each parameter together with its gradient.
pub fn table_memory(table: &[LayerDesc], batch: usize) -> u64 {
    let mut shapes: Vec<Vec<usize>> = Vec::new();
    if let Some(first) = table.first() {
        shapes.push(std::iter::once(batch).chain(first.input.iter().copied()).collect());
    }
    for row in table {
        shapes.push(std::iter::once(batch).chain(row.output.iter().copied()).collect());
        for p in &row.params {
            shapes.push(p.clone());
            shapes.push(p.clone());
        }
    }
    estimate_memory(&shapes)
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every tensor on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Vec<Var>> {
        self.tensors
            .iter()
            .map(|t| tape.leaf(t.clone().with_requires_grad(trainable)))
            .collect()
    }

    /// Copies the gradients of the last backward pass onto the tensors.
    pub fn pull_grads(&mut self, tape: &Tape, vars: &[Var]) {
        for (t, &v) in self.tensors.iter_mut().zip(vars) {
            t.zero_grad();
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }
}
