use serde::{Deserialize, Serialize};

use super::tensor::{fmt_shape, Result, Tensor, TensorError};

/// Update rule and its hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

/// Optimizer configuration plus one set of auxiliary buffers per parameter.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[Tensor]) -> Self {
        let buffers = || params.iter().map(|p| vec![0.0; p.len()]).collect::<Vec<_>>();
        let second = match kind {
            OptimizerKind::Adam { .. } => buffers(),
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        OptimizerState {
            kind,
            lr,
            first: buffers(),
            second,
            steps: 0,
        }
    }

    pub fn sgd(lr: f64, momentum: f64, params: &[Tensor]) -> Self {
        Self::new(OptimizerKind::SgdMomentum { momentum }, lr, params)
    }

    pub fn adam(lr: f64, beta1: f64, beta2: f64, eps: f64, params: &[Tensor]) -> Self {
        Self::new(OptimizerKind::Adam { beta1, beta2, eps }, lr, params)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter that carries a gradient.
    pub fn step(&mut self, params: &mut [Tensor]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(TensorError::shape(
                "optimizer step",
                format!("{} parameters", self.first.len()),
                format!("{} parameters", params.len()),
            ));
        }
        for (i, p) in params.iter().enumerate() {
            if p.len() != self.first[i].len() {
                return Err(TensorError::shape(
                    "optimizer step",
                    format!("{} values", self.first[i].len()),
                    fmt_shape(p.shape()),
                ));
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = p.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let data = p.data_mut();
            match self.kind {
                OptimizerKind::SgdMomentum { momentum } => {
                    for ((w, v), g) in data.iter_mut().zip(&mut self.first[i]).zip(&g) {
                        *v = momentum * *v - self.lr * g;
                        *w += *v;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for j in 0..data.len() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                        let mhat = m[j] / c1;
                        let vhat = v[j] / c2;
                        data[j] -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        if params.iter().any(|p| !p.all_finite()) {
            return Err(TensorError::NonFinite { op: "optimizer step" });
        }
        Ok(())
    }
}

pub fn zero_grad(params: &mut [Tensor]) {
    params.iter_mut().for_each(Tensor::zero_grad);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_step() {
        let mut p = vec![Tensor::scalar(1.0).with_requires_grad(true)];
        p[0].accumulate_grad(&[2.0]);
        let mut opt = OptimizerState::sgd(0.1, 0.0, &p);
        opt.step(&mut p).unwrap();
        assert!((p[0].item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut opt = OptimizerState::sgd(1.0, 0.5, &p);
        for _ in 0..2 {
            zero_grad(&mut p);
            p[0].accumulate_grad(&[1.0]);
            opt.step(&mut p).unwrap();
        }
        // v1 = -1, v2 = -0.5 - 1
        assert!((p[0].item() + 2.5).abs() < 1e-15);
    }

    #[test]
    fn params_without_grad_are_untouched() {
        let mut p = vec![Tensor::scalar(3.0)];
        let mut opt = OptimizerState::adam(0.1, 0.9, 0.999, 1e-8, &p);
        opt.step(&mut p).unwrap();
        assert_eq!(p[0].item(), 3.0);
    }
}
