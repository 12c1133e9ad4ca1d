//! Finite-difference gradient verification.
//!
//! The numerical side only ever re-runs the forward pass, so it stays
//! independent of every backward rule it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Result, Tape, Tensor, Var};

/// Central-difference step used by the checks.
pub const FD_STEP: f64 = 1e-5;

/// Builds a scalar loss from the bound inputs.
pub type LossFn = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// Outcome of comparing analytic and numerical gradients for one case.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    /// Largest norm-wise relative error over all differentiable inputs:
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`.
    pub max_rel_error: f64,
    /// True for ops with a kink (maxpool, leaky ReLU, the BCE clamp).
    pub piecewise: bool,
}

fn eval_loss(build: &LossFn, inputs: &[Tensor]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut tape, &vars)?;
    Ok(tape.value(loss).item())
}

/// Central-difference gradient of the loss with respect to `inputs[which]`.
pub fn numerical_grad(build: &LossFn, inputs: &[Tensor], which: usize, step: f64) -> Result<Vec<f64>> {
    let mut work = inputs.to_vec();
    let mut grad = vec![0.0; inputs[which].len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = inputs[which].data()[i];
        work[which].data_mut()[i] = orig + step;
        let plus = eval_loss(build, &work)?;
        work[which].data_mut()[i] = orig - step;
        let minus = eval_loss(build, &work)?;
        work[which].data_mut()[i] = orig;
        *g = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Gradients from one tape backward pass, one entry per input that has
/// `requires_grad` set (others yield `None`).
pub fn analytic_grads(build: &LossFn, inputs: &[Tensor]) -> Result<Vec<Option<Vec<f64>>>> {
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            t.requires_grad()
                .then(|| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        })
        .collect())
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// Maximum relative error over every input with `requires_grad`.
pub fn check_gradients(build: &LossFn, inputs: &[Tensor]) -> Result<f64> {
    let analytic = analytic_grads(build, inputs)?;
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        if let Some(a) = a {
            let n = numerical_grad(build, inputs, i, FD_STEP)?;
            worst = worst.max(relative_error(a, &n));
        }
    }
    Ok(worst)
}

// ----------------------------------------------------------------------
// randomized operator catalogue

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).with_requires_grad(true)
}

fn fixed(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values in `[lo, hi)` that are pairwise at least `gap` apart, shuffled.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * gap + rng.random_range(0.0..gap * 0.25)).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        vals.swap(i, j);
    }
    Tensor::new(shape.to_vec(), vals).expect("shape").with_requires_grad(true)
}

/// Non-uniform quadratic read-out so upstream gradients vary per element.
fn readout(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = tape.shape(y).to_vec();
    let target = fixed(&mut rng, &shape, -1.0, 1.0);
    let weights = fixed(&mut rng, &shape, 0.5, 1.5);
    tape.weighted_mse(y, &target, &weights, 1.0)
}

/// One randomized gradient-check instance.
pub struct GradCase {
    pub name: String,
    pub piecewise: bool,
    pub inputs: Vec<Tensor>,
    pub build: Box<LossFn>,
}

impl GradCase {
    pub fn run(&self) -> Result<GradReport> {
        Ok(GradReport {
            name: self.name.clone(),
            max_rel_error: check_gradients(&*self.build, &self.inputs)?,
            piecewise: self.piecewise,
        })
    }
}

fn case(name: &str, piecewise: bool, inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> GradCase {
    GradCase {
        name: name.to_string(),
        piecewise,
        inputs,
        build: Box::new(build),
    }
}

/// Every differentiable operator, instantiated `instances` times with
/// seeded random shapes and values.
pub fn operator_cases(instances: usize, seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for inst in 0..instances {
        let s = seed.wrapping_mul(1_000_003).wrapping_add(inst as u64);

        let (k, stride, pad) = (rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(0..=1));
        let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let h = rng.random_range(k.max(2)..=5);
        cases.push(case(
            &format!("conv2d[k{k} s{stride} p{pad}]"),
            false,
            vec![
                uniform(&mut rng, &[1, cin, h, h + 1], -1.0, 1.0),
                uniform(&mut rng, &[cout, cin, k, k], -1.0, 1.0),
                uniform(&mut rng, &[cout], -1.0, 1.0),
            ],
            move |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], stride, pad)?;
                readout(t, y, s)
            },
        ));

        let (k, stride) = (rng.random_range(1..=3), rng.random_range(1..=2));
        let pad = if k > 1 { rng.random_range(0..=1) } else { 0 };
        let h = rng.random_range(2..=3);
        cases.push(case(
            &format!("conv_transpose2d[k{k} s{stride} p{pad}]"),
            false,
            vec![
                uniform(&mut rng, &[1, cin, h, h], -1.0, 1.0),
                uniform(&mut rng, &[cin, cout, k, k], -1.0, 1.0),
            ],
            move |t, v| {
                let y = t.conv_transpose2d(v[0], v[1], stride, pad)?;
                readout(t, y, s)
            },
        ));

        cases.push(case(
            "maxpool2d",
            true,
            vec![distinct(&mut rng, &[1, 2, 4, 4], 0.05)],
            move |t, v| {
                let y = t.maxpool2d(v[0], 2, 2)?;
                readout(t, y, s)
            },
        ));

        cases.push(case(
            "upsample_nearest2x",
            false,
            vec![uniform(&mut rng, &[1, 2, 3, 3], -1.0, 1.0)],
            move |t, v| {
                let y = t.upsample_nearest2x(v[0])?;
                readout(t, y, s)
            },
        ));

        cases.push(case("sigmoid", false, vec![uniform(&mut rng, &[2, 5], -4.0, 4.0)], move |t, v| {
            let y = t.sigmoid(v[0])?;
            readout(t, y, s)
        }));

        // keep inputs away from the kink so the central difference never straddles it
        let lr_input = Tensor::from_fn(&[2, 6], |_| {
            let mag = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .with_requires_grad(true);
        cases.push(case("leaky_relu", true, vec![lr_input], move |t, v| {
            let y = t.leaky_relu(v[0], 0.1)?;
            readout(t, y, s)
        }));

        cases.push(case(
            "linear",
            false,
            vec![
                uniform(&mut rng, &[2, 3], -1.0, 1.0),
                uniform(&mut rng, &[3, 4], -1.0, 1.0),
                uniform(&mut rng, &[4], -1.0, 1.0),
            ],
            move |t, v| {
                let y = t.linear(v[0], v[1], v[2])?;
                readout(t, y, s)
            },
        ));

        cases.push(case(
            "flatten",
            false,
            vec![uniform(&mut rng, &[2, 2, 2, 3], -1.0, 1.0)],
            move |t, v| {
                let y = t.flatten(v[0])?;
                readout(t, y, s)
            },
        ));

        cases.push(case(
            "add+scale",
            false,
            vec![uniform(&mut rng, &[3, 2], -1.0, 1.0), uniform(&mut rng, &[3, 2], -1.0, 1.0)],
            move |t, v| {
                let y = t.add(v[0], v[1])?;
                let y = t.scale(y, -1.7)?;
                readout(t, y, s)
            },
        ));

        cases.push(case("sum/mean", false, vec![uniform(&mut rng, &[2, 3, 2], -1.0, 1.0)], move |t, v| {
            let sq = t.sigmoid(v[0])?;
            let a = t.sum(sq)?;
            let b = t.mean(v[0])?;
            let ab = t.add(a, b)?;
            let r = t.reshape(ab, &[1])?;
            readout(t, r, s)
        }));

        let target = fixed(&mut rng, &[6], 0.0, 1.0);
        cases.push(case("bce_loss", false, vec![uniform(&mut rng, &[6], 0.05, 0.95)], move |t, v| {
            t.bce_loss(v[0], &target)
        }));

        let target = Tensor::from_fn(&[6], |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        let weights = fixed(&mut rng, &[6], 0.0, 2.0);
        cases.push(case(
            "weighted_bce",
            false,
            vec![uniform(&mut rng, &[6], 0.05, 0.95)],
            move |t, v| t.weighted_bce(v[0], &target, &weights, 3.0),
        ));

        let target = fixed(&mut rng, &[5], -1.0, 1.0);
        cases.push(case("mse_loss", false, vec![uniform(&mut rng, &[5], -1.0, 1.0)], move |t, v| {
            let y = t.sigmoid(v[0])?;
            t.mse_loss(y, &target)
        }));

        let gain = rng.random_range(0.0..1.0);
        cases.push(case(
            "attenuate",
            false,
            vec![
                uniform(&mut rng, &[2, 3, 2, 3], 0.0, 1.0),
                uniform(&mut rng, &[2, 1, 2, 3], 0.0, 1.0),
            ],
            move |t, v| {
                let y = t.attenuate(v[0], v[1], gain)?;
                readout(t, y, s)
            },
        ));
    }
    cases
}
