//! Reverse-mode tape.
//!
//! Every operator appends one node holding its forward value and whatever
//! context its backward rule needs. Nodes only reference earlier nodes, so
//! the recording order is already a topological order and `backward` is a
//! single reverse sweep.

use super::kernels::{col2im, gemm, im2col, ConvGeometry};
use super::tensor::{fmt_shape, Result, Tensor, TensorError};

/// Log clamp applied to predictions inside the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        // geometry of the output image seen as a conv2d input
        geom: ConvGeometry,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Reshape {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Sum {
        input: Var,
        factor: f64,
    },
    Bce {
        pred: Var,
        target: Vec<f64>,
        weights: Option<Vec<f64>>,
        norm: f64,
    },
    SquaredError {
        pred: Var,
        target: Vec<f64>,
        weights: Option<Vec<f64>>,
        norm: f64,
    },
    Attenuate {
        image: Var,
        mask: Var,
        gain: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for one training or evaluation step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    budget: Option<u64>,
    allocated: u64,
}

fn check_same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(TensorError::shape(op, fmt_shape(a), fmt_shape(b)));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that refuses to record past `bytes` of estimated storage.
    pub fn with_budget(bytes: u64) -> Self {
        Tape {
            budget: Some(bytes),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes reserved so far (values, anticipated gradients, saved context).
    pub fn allocated_bytes(&self) -> u64 {
        self.allocated
    }

    /// Records `tensor` as an input. Its `requires_grad` flag decides whether
    /// `backward` computes a gradient for it.
    pub fn leaf(&mut self, tensor: Tensor) -> Result<Var> {
        let bytes = self.value_bytes(tensor.len(), tensor.requires_grad());
        self.reserve("leaf", bytes)?;
        Ok(self.push(tensor, Op::Leaf))
    }

    /// Records a tensor that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Result<Var> {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].value.requires_grad()
    }

    /// Gradient of the last `backward` call with respect to `var`.
    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.nodes[var.0].value.grad()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn value_bytes(&self, numel: usize, requires_grad: bool) -> u64 {
        let factor = if requires_grad { 2 } else { 1 };
        8 * numel as u64 * factor
    }

    fn reserve(&mut self, op: &'static str, bytes: u64) -> Result<()> {
        let required = self.allocated + bytes;
        if let Some(budget) = self.budget {
            if required > budget {
                return Err(TensorError::BudgetExceeded {
                    op,
                    required,
                    budget,
                });
            }
        }
        self.allocated = required;
        Ok(())
    }

    fn record(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<f64>, grad: bool, op: Op) -> Result<Var> {
        let value = Tensor::new(shape, data)?.with_requires_grad(grad);
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        Ok(self.push(value, op))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    // ------------------------------------------------------------------
    // operators

    /// 2-D cross-correlation with zero padding.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let [n, cin, h, w] = self.value(input).dims4(OP)?;
        let [cout, wcin, k, k2] = self.value(weight).dims4(OP)?;
        if wcin != cin || k != k2 {
            return Err(TensorError::shape(
                OP,
                format!("weight Cout x {cin} x K x K"),
                fmt_shape(self.shape(weight)),
            ));
        }
        if self.shape(bias) != [cout] {
            return Err(TensorError::shape(OP, format!("bias {cout}"), fmt_shape(self.shape(bias))));
        }
        if stride == 0 || k == 0 {
            return Err(TensorError::invalid(OP, "kernel and stride must be at least 1"));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(TensorError::shape(
                OP,
                format!("padded input of at least {k}x{k}"),
                format!("{}x{} (pad {pad})", h + 2 * pad, w + 2 * pad),
            ));
        }
        let geom = ConvGeometry {
            channels: cin,
            height: h,
            width: w,
            kernel: k,
            stride,
            pad,
        };
        let (oh, ow) = (geom.out_height(), geom.out_width());
        let (rows, plane) = (geom.col_rows(), geom.col_cols());
        let grad = self.any_grad(&[input, weight, bias]);
        let out_len = n * cout * plane;
        let bytes = self.value_bytes(out_len, grad) + 8 * (n * rows * plane) as u64;
        self.reserve(OP, bytes)?;

        let mut cols = vec![0.0; n * rows * plane];
        let mut out = vec![0.0; out_len];
        {
            let x = self.value(input).data();
            let wt = self.value(weight).data();
            let b = self.value(bias).data();
            for s in 0..n {
                let col = &mut cols[s * rows * plane..(s + 1) * rows * plane];
                im2col(&x[s * cin * h * w..(s + 1) * cin * h * w], &geom, col);
                let dst = &mut out[s * cout * plane..(s + 1) * cout * plane];
                for (co, chunk) in dst.chunks_mut(plane).enumerate() {
                    chunk.fill(b[co]);
                }
                gemm(cout, rows, plane, wt, false, col, false, dst, true);
            }
        }
        let op = Op::Conv2d {
            input,
            weight,
            bias,
            geom,
            cols,
        };
        self.record(OP, vec![n, cout, oh, ow], out, grad, op)
    }

    /// Transposed convolution: the adjoint of [`Tape::conv2d`]'s input map.
    pub fn conv_transpose2d(&mut self, input: Var, weight: Var, stride: usize, pad: usize) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let [n, cin, h, w] = self.value(input).dims4(OP)?;
        let [wcin, cout, k, k2] = self.value(weight).dims4(OP)?;
        if wcin != cin || k != k2 {
            return Err(TensorError::shape(
                OP,
                format!("weight {cin} x Cout x K x K"),
                fmt_shape(self.shape(weight)),
            ));
        }
        if stride == 0 || k == 0 {
            return Err(TensorError::invalid(OP, "kernel and stride must be at least 1"));
        }
        let span_h = (h - 1) * stride + k;
        let span_w = (w - 1) * stride + k;
        if span_h <= 2 * pad || span_w <= 2 * pad {
            return Err(TensorError::shape(
                OP,
                format!("output larger than 2*pad = {}", 2 * pad),
                format!("{span_h}x{span_w} before cropping"),
            ));
        }
        let (oh, ow) = (span_h - 2 * pad, span_w - 2 * pad);
        let geom = ConvGeometry {
            channels: cout,
            height: oh,
            width: ow,
            kernel: k,
            stride,
            pad,
        };
        debug_assert_eq!((geom.out_height(), geom.out_width()), (h, w));
        let rows = geom.col_rows();
        let plane = h * w;
        let grad = self.any_grad(&[input, weight]);
        let out_len = n * cout * oh * ow;
        self.reserve(OP, self.value_bytes(out_len, grad))?;

        let mut out = vec![0.0; out_len];
        let mut cols = vec![0.0; rows * plane];
        {
            let x = self.value(input).data();
            let wt = self.value(weight).data();
            for s in 0..n {
                gemm(rows, cin, plane, wt, true, &x[s * cin * plane..(s + 1) * cin * plane], false, &mut cols, false);
                col2im(&cols, &geom, &mut out[s * cout * oh * ow..(s + 1) * cout * oh * ow]);
            }
        }
        let op = Op::ConvTranspose2d { input, weight, geom };
        self.record(OP, vec![n, cout, oh, ow], out, grad, op)
    }

    /// Max pooling; ties resolve to the first window position in row-major order.
    pub fn maxpool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<Var> {
        const OP: &str = "maxpool2d";
        let [n, c, h, w] = self.value(input).dims4(OP)?;
        if k == 0 || stride == 0 {
            return Err(TensorError::invalid(OP, "window and stride must be at least 1"));
        }
        if h < k || w < k || h % stride != 0 || w % stride != 0 {
            return Err(TensorError::shape(
                OP,
                format!("H, W >= {k} and divisible by stride {stride}"),
                format!("{h}x{w}"),
            ));
        }
        let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
        let grad = self.requires_grad(input);
        let out_len = n * c * oh * ow;
        self.reserve(OP, self.value_bytes(out_len, grad) + 8 * out_len as u64)?;
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(out_len);
        let mut argmax = Vec::with_capacity(out_len);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        self.record(OP, vec![n, c, oh, ow], out, grad, Op::MaxPool { input, argmax })
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample_nearest2x(&mut self, input: Var) -> Result<Var> {
        const OP: &str = "upsample_nearest2x";
        let [n, c, h, w] = self.value(input).dims4(OP)?;
        let grad = self.requires_grad(input);
        let (oh, ow) = (2 * h, 2 * w);
        self.reserve(OP, self.value_bytes(n * c * oh * ow, grad))?;
        let x = self.value(input).data();
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for y in 0..oh {
                for xo in 0..ow {
                    dst[y * ow + xo] = src[(y / 2) * w + xo / 2];
                }
            }
        }
        self.record(OP, vec![n, c, oh, ow], out, grad, Op::Upsample { input })
    }

    fn unary(&mut self, op_name: &'static str, input: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let grad = self.requires_grad(input);
        let value = self.value(input);
        let bytes = self.value_bytes(value.len(), grad);
        let shape = value.shape().to_vec();
        let data = value.data().iter().map(|&v| f(v)).collect();
        self.reserve(op_name, bytes)?;
        self.record(op_name, shape, data, grad, op)
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.unary("sigmoid", input, sigmoid, Op::Sigmoid { input })
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Result<Var> {
        let f = move |v: f64| if v > 0.0 { v } else { slope * v };
        self.unary("leaky_relu", input, f, Op::LeakyRelu { input, slope })
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        self.unary("scale", input, move |v| v * factor, Op::Scale { input, factor })
    }

    /// Affine map `x·W + b` for `x: N x F`, `W: F x G`, `b: G`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "linear";
        let (n, f) = match self.shape(input) {
            &[n, f] => (n, f),
            other => return Err(TensorError::shape(OP, "input N x F", fmt_shape(other))),
        };
        let g = match self.shape(weight) {
            &[wf, g] if wf == f => g,
            other => return Err(TensorError::shape(OP, format!("weight {f} x G"), fmt_shape(other))),
        };
        if self.shape(bias) != [g] {
            return Err(TensorError::shape(OP, format!("bias {g}"), fmt_shape(self.shape(bias))));
        }
        let grad = self.any_grad(&[input, weight, bias]);
        self.reserve(OP, self.value_bytes(n * g, grad))?;
        let mut out = vec![0.0; n * g];
        {
            let b = self.value(bias).data();
            for row in out.chunks_mut(g) {
                row.copy_from_slice(b);
            }
            gemm(n, f, g, self.value(input).data(), false, self.value(weight).data(), false, &mut out, true);
        }
        self.record(OP, vec![n, g], out, grad, Op::Linear { input, weight, bias })
    }

    /// Collapses every dimension after the first: `N x ...` to `N x F`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input);
        let n = shape.first().copied().unwrap_or(1);
        let f = shape.iter().skip(1).product();
        self.reshape(input, &[n, f])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        const OP: &str = "reshape";
        let value = self.value(input);
        let numel: usize = shape.iter().product();
        if numel != value.len() {
            return Err(TensorError::shape(OP, fmt_shape(value.shape()), fmt_shape(shape)));
        }
        let grad = value.requires_grad();
        let data = value.data().to_vec();
        self.reserve(OP, self.value_bytes(numel, grad))?;
        self.record(OP, shape.to_vec(), data, grad, Op::Reshape { input })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "add";
        check_same_shape(OP, self.shape(a), self.shape(b))?;
        let grad = self.any_grad(&[a, b]);
        let shape = self.shape(a).to_vec();
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect::<Vec<_>>();
        self.reserve(OP, self.value_bytes(data.len(), grad))?;
        self.record(OP, shape, data, grad, Op::Add { a, b })
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.reduce("sum", input, 1.0)
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let n = self.value(input).len() as f64;
        self.reduce("mean", input, 1.0 / n)
    }

    fn reduce(&mut self, op_name: &'static str, input: Var, factor: f64) -> Result<Var> {
        let grad = self.requires_grad(input);
        let total: f64 = self.value(input).data().iter().sum::<f64>() * factor;
        self.reserve(op_name, self.value_bytes(1, grad))?;
        self.record(op_name, Vec::new(), vec![total], grad, Op::Sum { input, factor })
    }

    fn target_data(&self, op: &'static str, pred: Var, other: &Tensor) -> Result<Vec<f64>> {
        check_same_shape(op, self.shape(pred), other.shape())?;
        Ok(other.data().to_vec())
    }

    /// Mean binary cross-entropy; predictions are clamped into `[ε, 1-ε]`.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let target = self.target_data("bce_loss", pred, target)?;
        let norm = target.len() as f64;
        self.bce("bce_loss", pred, target, None, norm)
    }

    /// `Σ wᵢ·bceᵢ / norm` with per-element weights.
    pub fn weighted_bce(&mut self, pred: Var, target: &Tensor, weights: &Tensor, norm: f64) -> Result<Var> {
        let target = self.target_data("weighted_bce", pred, target)?;
        let weights = self.target_data("weighted_bce", pred, weights)?;
        self.bce("weighted_bce", pred, target, Some(weights), norm)
    }

    fn bce(&mut self, op_name: &'static str, pred: Var, target: Vec<f64>, weights: Option<Vec<f64>>, norm: f64) -> Result<Var> {
        if !(norm > 0.0) {
            return Err(TensorError::invalid(op_name, "normaliser must be positive"));
        }
        let p = self.value(pred).data();
        let mut total = 0.0;
        for (i, (&pv, &t)) in p.iter().zip(&target).enumerate() {
            let w = weights.as_ref().map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            let pc = pv.clamp(BCE_EPS, 1.0 - BCE_EPS);
            total -= w * (t * pc.ln() + (1.0 - t) * (1.0 - pc).ln());
        }
        let grad = self.requires_grad(pred);
        self.reserve(op_name, self.value_bytes(1, grad) + 8 * target.len() as u64)?;
        let op = Op::Bce {
            pred,
            target,
            weights,
            norm,
        };
        self.record(op_name, Vec::new(), vec![total / norm], grad, op)
    }

    /// Mean squared error.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let target = self.target_data("mse_loss", pred, target)?;
        let norm = target.len() as f64;
        self.squared("mse_loss", pred, target, None, norm)
    }

    /// `Σ wᵢ·(pᵢ - tᵢ)² / norm` with per-element weights.
    pub fn weighted_mse(&mut self, pred: Var, target: &Tensor, weights: &Tensor, norm: f64) -> Result<Var> {
        let target = self.target_data("weighted_mse", pred, target)?;
        let weights = self.target_data("weighted_mse", pred, weights)?;
        self.squared("weighted_mse", pred, target, Some(weights), norm)
    }

    fn squared(&mut self, op_name: &'static str, pred: Var, target: Vec<f64>, weights: Option<Vec<f64>>, norm: f64) -> Result<Var> {
        if !(norm > 0.0) {
            return Err(TensorError::invalid(op_name, "normaliser must be positive"));
        }
        let p = self.value(pred).data();
        let total: f64 = p
            .iter()
            .zip(&target)
            .enumerate()
            .map(|(i, (pv, t))| weights.as_ref().map_or(1.0, |w| w[i]) * (pv - t) * (pv - t))
            .sum();
        let grad = self.requires_grad(pred);
        self.reserve(op_name, self.value_bytes(1, grad) + 8 * target.len() as u64)?;
        let op = Op::SquaredError {
            pred,
            target,
            weights,
            norm,
        };
        self.record(op_name, Vec::new(), vec![total / norm], grad, op)
    }

    /// `out(c,p) = x(c,p) + gain·m(p)·(1 - x(c,p))` for `x: N x C x H x W`
    /// and `m: N x 1 x H x W`.
    pub fn attenuate(&mut self, image: Var, mask: Var, gain: f64) -> Result<Var> {
        const OP: &str = "attenuate";
        let [n, c, h, w] = self.value(image).dims4(OP)?;
        let mshape = self.shape(mask);
        if mshape != [n, 1, h, w] {
            return Err(TensorError::shape(OP, fmt_shape(&[n, 1, h, w]), fmt_shape(mshape)));
        }
        let grad = self.any_grad(&[image, mask]);
        let plane = h * w;
        let mut out = vec![0.0; n * c * plane];
        {
            let x = self.value(image).data();
            let m = self.value(mask).data();
            for s in 0..n {
                let ms = &m[s * plane..(s + 1) * plane];
                for ch in 0..c {
                    let off = (s * c + ch) * plane;
                    for p in 0..plane {
                        let xv = x[off + p];
                        out[off + p] = xv + gain * ms[p] * (1.0 - xv);
                    }
                }
            }
        }
        self.reserve(OP, self.value_bytes(out.len(), grad))?;
        self.record(OP, vec![n, c, h, w], out, grad, Op::Attenuate { image, mask, gain })
    }

    // ------------------------------------------------------------------
    // backward

    /// Back-propagates from a scalar `loss`, storing gradients on every
    /// reachable node that requires them. Earlier gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        if !loss_value.all_finite() {
            return Err(TensorError::NonFinite { op: "backward" });
        }
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].value.requires_grad() {
                continue;
            }
            self.backward_node(idx, &g, &mut grads);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite { op: "backward" });
            }
            self.nodes[idx].value.accumulate_grad(&g);
        }
        Ok(())
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let wants = |v: Var| self.nodes[v.0].value.requires_grad();
        let numel = |v: Var| self.nodes[v.0].value.len();
        let data = |v: Var| self.nodes[v.0].value.data();
        let mut contrib: Vec<(Var, Vec<f64>)> = Vec::new();

        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                let [n, cin, h, w] = self.nodes[input.0].value.dims4("conv2d").expect("recorded");
                let cout = node.value.shape()[1];
                let (rows, plane) = (geom.col_rows(), geom.col_cols());
                if wants(*bias) {
                    let mut db = vec![0.0; cout];
                    for s in 0..n {
                        for (co, chunk) in g[s * cout * plane..(s + 1) * cout * plane].chunks(plane).enumerate() {
                            db[co] += chunk.iter().sum::<f64>();
                        }
                    }
                    contrib.push((*bias, db));
                }
                if wants(*weight) {
                    let mut dw = vec![0.0; cout * rows];
                    for s in 0..n {
                        let go = &g[s * cout * plane..(s + 1) * cout * plane];
                        let col = &cols[s * rows * plane..(s + 1) * rows * plane];
                        gemm(cout, plane, rows, go, false, col, true, &mut dw, true);
                    }
                    contrib.push((*weight, dw));
                }
                if wants(*input) {
                    let wt = data(*weight);
                    let mut dx = vec![0.0; n * cin * h * w];
                    let mut dcols = vec![0.0; rows * plane];
                    for s in 0..n {
                        let go = &g[s * cout * plane..(s + 1) * cout * plane];
                        gemm(rows, cout, plane, wt, true, go, false, &mut dcols, false);
                        col2im(&dcols, geom, &mut dx[s * cin * h * w..(s + 1) * cin * h * w]);
                    }
                    contrib.push((*input, dx));
                }
            }
            Op::ConvTranspose2d { input, weight, geom } => {
                let [n, cin, h, w] = self.nodes[input.0].value.dims4("conv_transpose2d").expect("recorded");
                let (cout, oh, ow) = (geom.channels, geom.height, geom.width);
                let rows = geom.col_rows();
                let plane = h * w;
                let x = data(*input);
                let wt = data(*weight);
                let mut dcols = vec![0.0; rows * plane];
                let mut dx = wants(*input).then(|| vec![0.0; n * cin * plane]);
                let mut dw = wants(*weight).then(|| vec![0.0; cin * rows]);
                for s in 0..n {
                    im2col(&g[s * cout * oh * ow..(s + 1) * cout * oh * ow], geom, &mut dcols);
                    if let Some(dx) = dx.as_mut() {
                        gemm(cin, rows, plane, wt, false, &dcols, false, &mut dx[s * cin * plane..(s + 1) * cin * plane], false);
                    }
                    if let Some(dw) = dw.as_mut() {
                        gemm(cin, plane, rows, &x[s * cin * plane..(s + 1) * cin * plane], false, &dcols, true, dw, true);
                    }
                }
                contrib.extend(dx.map(|d| (*input, d)));
                contrib.extend(dw.map(|d| (*weight, d)));
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![0.0; numel(*input)];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] += gv;
                }
                contrib.push((*input, dx));
            }
            Op::Upsample { input } => {
                let [n, c, h, w] = self.nodes[input.0].value.dims4("upsample_nearest2x").expect("recorded");
                let ow = 2 * w;
                let mut dx = vec![0.0; n * c * h * w];
                for plane in 0..n * c {
                    let src = &g[plane * 4 * h * w..(plane + 1) * 4 * h * w];
                    let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
                    for y in 0..2 * h {
                        for x in 0..ow {
                            dst[(y / 2) * w + x / 2] += src[y * ow + x];
                        }
                    }
                }
                contrib.push((*input, dx));
            }
            Op::Sigmoid { input } => {
                let dx = node.value.data().iter().zip(g).map(|(s, gv)| gv * s * (1.0 - s)).collect();
                contrib.push((*input, dx));
            }
            Op::LeakyRelu { input, slope } => {
                let dx = data(*input)
                    .iter()
                    .zip(g)
                    .map(|(&x, gv)| if x > 0.0 { *gv } else { slope * gv })
                    .collect();
                contrib.push((*input, dx));
            }
            Op::Scale { input, factor } => {
                contrib.push((*input, g.iter().map(|v| v * factor).collect()));
            }
            Op::Linear { input, weight, bias } => {
                let (n, f) = (self.nodes[input.0].value.shape()[0], self.nodes[input.0].value.shape()[1]);
                let gdim = node.value.shape()[1];
                if wants(*bias) {
                    let mut db = vec![0.0; gdim];
                    for row in g.chunks(gdim) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    contrib.push((*bias, db));
                }
                if wants(*weight) {
                    let mut dw = vec![0.0; f * gdim];
                    gemm(f, n, gdim, data(*input), true, g, false, &mut dw, false);
                    contrib.push((*weight, dw));
                }
                if wants(*input) {
                    let mut dx = vec![0.0; n * f];
                    gemm(n, gdim, f, g, false, data(*weight), true, &mut dx, false);
                    contrib.push((*input, dx));
                }
            }
            Op::Reshape { input } => contrib.push((*input, g.to_vec())),
            Op::Add { a, b } => {
                contrib.push((*a, g.to_vec()));
                contrib.push((*b, g.to_vec()));
            }
            Op::Sum { input, factor } => {
                contrib.push((*input, vec![g[0] * factor; numel(*input)]));
            }
            Op::Bce {
                pred,
                target,
                weights,
                norm,
            } => {
                let scale = g[0] / norm;
                let dx = data(*pred)
                    .iter()
                    .zip(target)
                    .enumerate()
                    .map(|(i, (&p, &t))| {
                        let w = weights.as_ref().map_or(1.0, |w| w[i]);
                        if w == 0.0 || p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                            0.0
                        } else {
                            scale * w * (p - t) / (p * (1.0 - p))
                        }
                    })
                    .collect();
                contrib.push((*pred, dx));
            }
            Op::SquaredError {
                pred,
                target,
                weights,
                norm,
            } => {
                let scale = g[0] / norm;
                let dx = data(*pred)
                    .iter()
                    .zip(target)
                    .enumerate()
                    .map(|(i, (p, t))| scale * weights.as_ref().map_or(1.0, |w| w[i]) * 2.0 * (p - t))
                    .collect();
                contrib.push((*pred, dx));
            }
            Op::Attenuate { image, mask, gain } => {
                let [n, c, h, w] = self.nodes[image.0].value.dims4("attenuate").expect("recorded");
                let plane = h * w;
                let x = data(*image);
                let m = data(*mask);
                if wants(*image) {
                    let mut dx = vec![0.0; x.len()];
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * plane;
                            for p in 0..plane {
                                dx[off + p] = g[off + p] * (1.0 - gain * m[s * plane + p]);
                            }
                        }
                    }
                    contrib.push((*image, dx));
                }
                if wants(*mask) {
                    let mut dm = vec![0.0; m.len()];
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * plane;
                            for p in 0..plane {
                                dm[s * plane + p] += g[off + p] * gain * (1.0 - x[off + p]);
                            }
                        }
                    }
                    contrib.push((*mask, dm));
                }
            }
        }

        for (var, d) in contrib {
            if !wants(var) {
                continue;
            }
            match &mut grads[var.0] {
                Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(d),
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
