use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shadekit::tensorcore::gradcheck::{check_gradients, operator_cases, LossFn};
use shadekit::tensorcore::{OptimizerState, Tape, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

#[test]
fn every_operator_matches_finite_differences() {
    let cases = operator_cases(20, 11);
    for case in &cases {
        let report = case.run().unwrap();
        let tol = if report.piecewise { 1e-4 } else { 1e-6 };
        assert!(report.max_rel_error < tol, "{} rel err {:e}", report.name, report.max_rel_error);
    }
}

#[test]
fn sum_of_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![
        random(&mut rng, &[1, 2, 5, 5]).with_requires_grad(true),
        random(&mut rng, &[3, 2, 3, 3]).with_requires_grad(true),
        random(&mut rng, &[3]).with_requires_grad(true),
    ];
    let build: Box<LossFn> = Box::new(|t, v| {
        let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
        t.sum(y)
    });
    assert!(check_gradients(&*build, &inputs).unwrap() < 1e-6);
}

#[test]
fn bce_gradient_at_073() {
    let inputs = vec![Tensor::new(vec![1], vec![0.73]).unwrap().with_requires_grad(true)];
    let target = Tensor::new(vec![1], vec![1.0]).unwrap();
    let build: Box<LossFn> = Box::new(move |t, v| t.bce_loss(v[0], &target));
    assert!(check_gradients(&*build, &inputs).unwrap() < 1e-6);
}

#[test]
fn conv_shape_formulas_hold_exhaustively() {
    for k in 1..=4 {
        for stride in 1..=2 {
            for pad in 0..=2 {
                for h in k..=8 {
                    for w in k..=8 {
                        let mut tape = Tape::new();
                        let x = tape.constant(Tensor::zeros(&[1, 1, h, w])).unwrap();
                        let wt = tape.constant(Tensor::zeros(&[2, 1, k, k])).unwrap();
                        let b = tape.constant(Tensor::zeros(&[2])).unwrap();
                        let y = tape.conv2d(x, wt, b, stride, pad).unwrap();
                        let want = [1, 2, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1];
                        assert_eq!(tape.shape(y), &want);

                        let span = (h - 1) * stride + k;
                        let wt = tape.constant(Tensor::zeros(&[1, 2, k, k])).unwrap();
                        let r = tape.conv_transpose2d(x, wt, stride, pad);
                        if span > 2 * pad && (w - 1) * stride + k > 2 * pad {
                            let want = [1, 2, span - 2 * pad, (w - 1) * stride + k - 2 * pad];
                            assert_eq!(tape.shape(r.unwrap()), &want);
                        } else {
                            assert!(r.is_err());
                        }
                    }
                }
            }
        }
    }
}

/// The identity needs the transposed output to cover the whole conv input,
/// i.e. `(H + 2·pad − K)` divisible by the stride (there is no output padding).
#[test]
fn conv_transpose_is_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 30 {
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=2).min(k - 1);
        let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let h = rng.random_range(k.max(2)..=7);
        if (h + 2 * pad - k) % stride != 0 {
            continue;
        }
        checked += 1;
        let mut tape = Tape::new();
        let xt = random(&mut rng, &[2, cin, h, h]);
        let x = tape.constant(xt.clone()).unwrap();
        let w = tape.constant(random(&mut rng, &[cout, cin, k, k])).unwrap();
        let b = tape.constant(Tensor::zeros(&[cout])).unwrap();
        let y = tape.conv2d(x, w, b, stride, pad).unwrap();
        let yt = random(&mut rng, tape.shape(y));
        let lhs: f64 = tape.value(y).data().iter().zip(yt.data()).map(|(a, b)| a * b).sum();

        let yv = tape.constant(yt).unwrap();
        let back = tape.conv_transpose2d(yv, w, stride, pad).unwrap();
        assert_eq!(tape.shape(back), xt.shape());
        let rhs: f64 = xt.data().iter().zip(tape.value(back).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "k{k} s{stride} p{pad} h{h}: {lhs} vs {rhs}");
    }
}

fn forward_backward(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let x = tape.constant(random(&mut rng, &[2, 3, 8, 8])).unwrap();
    let w = tape.leaf(random(&mut rng, &[4, 3, 3, 3]).with_requires_grad(true)).unwrap();
    let b = tape.leaf(random(&mut rng, &[4]).with_requires_grad(true)).unwrap();
    let y = tape.conv2d(x, w, b, 1, 1).unwrap();
    let y = tape.leaky_relu(y, 0.1).unwrap();
    let y = tape.maxpool2d(y, 2, 2).unwrap();
    let y = tape.sigmoid(y).unwrap();
    let target = Tensor::full(tape.shape(y), 1.0);
    let l = tape.bce_loss(y, &target).unwrap();
    tape.backward(l).unwrap();
    (tape.value(y).data().to_vec(), tape.grad(w).unwrap().to_vec())
}

#[test]
fn forward_and_backward_are_bit_reproducible() {
    let (a1, g1) = forward_backward(9);
    let (a2, g2) = forward_backward(9);
    assert_eq!(a1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), a2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(g1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), g2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

/// Straight transcription of the Adam update with bias correction.
fn reference_adam(params: &mut [f64], grads: &[Vec<f64>], lr: f64, b1: f64, b2: f64, eps: f64) {
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as f64;
        for i in 0..params.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powf(t));
            let vh = v[i] / (1.0 - b2.powf(t));
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[test]
fn adam_matches_reference_for_five_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let init = [0.3, -1.2, 2.5];
    let grads: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let mut expected = init.to_vec();
    reference_adam(&mut expected, &grads, 0.01, 0.9, 0.999, 1e-8);

    let mut params = vec![Tensor::new(vec![3], init.to_vec()).unwrap()];
    let mut opt = OptimizerState::adam(0.01, 0.9, 0.999, 1e-8, &params);
    for g in &grads {
        params[0].zero_grad();
        params[0].accumulate_grad(g);
        opt.step(&mut params).unwrap();
    }
    for (a, b) in params[0].data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}
