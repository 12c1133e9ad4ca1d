use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shadekit::datakit::{synth_dataset, LabeledBox, Sample, SceneConfig};
use shadekit::evalkit::{iou, BBox, Detection};
use shadekit::models::*;
use shadekit::tensorcore::{estimate_memory, sigmoid, Tensor};

fn scenes(n: usize, seed: u64) -> Vec<Sample> {
    synth_dataset(&SceneConfig::with_seed(seed), n).unwrap()
}

fn random_images(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, 3, 64, 64], |_| rng.random_range(0.0..1.0))
}

#[test]
fn output_shapes_for_batches_1_to_8() {
    let seg = Model::init(ModelSpec::Segmentation(EncDecSpec::default()), 1).unwrap();
    let gan = Model::init(ModelSpec::Gan(GanSpec::default()), 1).unwrap();
    let det = Model::init(ModelSpec::Detector(DetectorSpec::default()), 1).unwrap();
    for n in 1..=8 {
        let x = random_images(n, n as u64);
        let m = seg.forward(&x).unwrap();
        assert_eq!(m.shape(), &[n, 1, 64, 64]);
        assert!(m.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let g = gan.forward(&x).unwrap();
        assert_eq!(g.shape(), &[n, 1, 64, 64]);
        let d = gan.discriminate(&x).unwrap();
        assert_eq!(d.shape(), &[n, 1]);
        assert!(d.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(det.forward(&x).unwrap().shape(), &[n, 6, 8, 8]);
    }
    let wrong = Tensor::zeros(&[1, 3, 32, 32]);
    assert!(matches!(seg.forward(&wrong), Err(ModelError::Tensor(_))));
}

#[test]
fn zero_weights_give_one_half() {
    let x = random_images(2, 3);
    let seg = Model::zeroed(ModelSpec::Segmentation(EncDecSpec::default())).unwrap();
    assert!(seg.forward(&x).unwrap().data().iter().all(|&v| v == 0.5));
    let gan = Model::zeroed(ModelSpec::Gan(GanSpec::default())).unwrap();
    assert!(gan.discriminate(&x).unwrap().data().iter().all(|&v| v == 0.5));
}

#[test]
fn encoder_ladder_must_end_at_128() {
    let spec = EncDecSpec {
        channels: vec![16, 32, 64],
        ..EncDecSpec::default()
    };
    assert!(matches!(spec.network(), Err(ModelError::Spec(_))));
    let net = EncDecSpec::default().network().unwrap();
    let table = net.layer_table("");
    let pools = table.iter().filter(|l| l.kind.label() == "maxpool2d").count();
    let ups = table.iter().filter(|l| l.kind.label() == "upsample_nearest2x").count();
    assert_eq!((pools, ups), (3, 3));
}

#[test]
fn attenuation_examples() {
    let img = Tensor::new(vec![1, 3, 1, 1], vec![0.2, 0.4, 0.4]).unwrap();
    let zero = Tensor::zeros(&[1, 1, 1, 1]);
    assert_eq!(apply_attenuation(&img, &zero, 1.0).unwrap().data(), img.data());
    let one = Tensor::full(&[1, 1, 1, 1], 1.0);
    assert_eq!(apply_attenuation(&img, &one, 1.0).unwrap().data()[0], 1.0);
    let half = Tensor::full(&[1, 1, 1, 1], 0.5);
    assert!((apply_attenuation(&img, &half, 1.0).unwrap().data()[1] - 0.7).abs() < 1e-15);
}

#[test]
fn attenuation_stays_in_unit_interval_on_grid() {
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let img = Tensor::new(vec![1, 1, 1, 11], grid.clone()).unwrap();
    for &m in &grid {
        for &g in &grid {
            let mask = Tensor::full(&[1, 1, 1, 11], m);
            let out = apply_attenuation(&img, &mask, g).unwrap();
            for (&o, &x) in out.data().iter().zip(&grid) {
                assert!((0.0..=1.0).contains(&o), "x {x} m {m} g {g} -> {o}");
                assert!(o >= x - 1e-15);
            }
        }
    }
}

fn brute_force_nms(dets: &[Detection], thr: f64) -> Vec<Detection> {
    // rank by score with index tie-break, then resolve keep flags in rank
    // order from the full pairwise IoU matrix
    let n = dets.len();
    let mut rank: Vec<usize> = (0..n).collect();
    rank.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
    let overlap: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    dets[i].image_id == dets[j].image_id
                        && dets[i].class_id == dets[j].class_id
                        && iou(&dets[i].bbox, &dets[j].bbox).unwrap() >= thr
                })
                .collect()
        })
        .collect();
    let mut keep = vec![false; n];
    for (pos, &i) in rank.iter().enumerate() {
        keep[i] = rank[..pos].iter().all(|&j| !(keep[j] && overlap[i][j]));
    }
    rank.into_iter().filter(|&i| keep[i]).map(|i| dets[i].clone()).collect()
}

#[test]
fn nms_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let n = rng.random_range(0..=20);
        let dets: Vec<Detection> = (0..n)
            .map(|_| Detection {
                image_id: format!("img{}", rng.random_range(0..2)),
                bbox: BBox::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0), rng.random_range(2.0..12.0), rng.random_range(2.0..12.0)),
                // coarse scores so ties occur
                score: rng.random_range(0..10) as f64 / 10.0,
                class_id: rng.random_range(0..2),
            })
            .collect();
        for thr in [0.3, 0.5, 0.7] {
            assert_eq!(nms(&dets, thr), brute_force_nms(&dets, thr));
        }
    }
}

#[test]
fn nms_keeps_higher_of_identical_pair() {
    let b = BBox::new(1.0, 1.0, 5.0, 5.0);
    let d = |score| Detection {
        image_id: "a".into(),
        bbox: b,
        score,
        class_id: 0,
    };
    assert_eq!(nms(&[d(0.8), d(0.9)], 0.5), vec![d(0.9)]);
}

#[test]
fn decode_threshold_one_is_empty() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let raw = Tensor::from_fn(&[2, 6, 8, 8], |_| rng.random_range(-4.0..4.0));
    let ids = vec!["a".to_string(), "b".to_string()];
    assert!(decode_predictions(&raw, 1.0, &ids, 64.0, 64.0).unwrap().is_empty());
    assert_eq!(decode_predictions(&raw, 0.0, &ids, 64.0, 64.0).unwrap().len(), 128);
}

#[test]
fn centred_box_targets_one_half() {
    let spec = DetectorSpec::default();
    // cell (2, 3) spans x 24..32, y 16..24
    let b = LabeledBox {
        x: 24.0,
        y: 16.0,
        w: 8.0,
        h: 8.0,
        class_id: 0,
    };
    let t = encode_targets(&spec, &[b], 64.0, 64.0).unwrap();
    let cell = 2 * 8 + 3;
    assert_eq!((t.target[cell], t.target[64 + cell]), (0.5, 0.5));
    assert_eq!((t.target[128 + cell], t.target[192 + cell]), (0.125, 0.125));
    assert_eq!(t.responsible.iter().filter(|&&r| r).count(), 1);

    let empty = encode_targets(&spec, &[], 64.0, 64.0).unwrap();
    let (bce, mse) = loss_weights(&spec, &empty.responsible);
    assert!(mse.iter().all(|&w| w == 0.0));
    for (i, &w) in bce.iter().enumerate() {
        assert_eq!(w, if (256..320).contains(&i) { NOOBJ_WEIGHT } else { 0.0 });
    }
    let out = LabeledBox { x: 60.0, ..b };
    assert!(matches!(encode_targets(&spec, &[out], 64.0, 64.0), Err(ModelError::BoxOutOfBounds(_))));
}

#[test]
fn larger_box_wins_a_shared_cell() {
    let spec = DetectorSpec::default();
    let small = LabeledBox { x: 26.0, y: 18.0, w: 4.0, h: 4.0, class_id: 0 };
    let large = LabeledBox { x: 20.0, y: 12.0, w: 16.0, h: 16.0, class_id: 0 };
    for order in [[small, large], [large, small]] {
        let t = encode_targets(&spec, &order, 64.0, 64.0).unwrap();
        assert_eq!(t.target[128 + 2 * 8 + 3], 0.25);
    }
}

#[test]
fn encode_decode_round_trip() {
    let spec = DetectorSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    while checked < 200 {
        let w = rng.random_range(3.2..60.8);
        let h = rng.random_range(3.2..60.8);
        let x = rng.random_range(0.0..64.0 - w);
        let y = rng.random_range(0.0..64.0 - h);
        let b = LabeledBox { x, y, w, h, class_id: 0 };
        let t = encode_targets(&spec, &[b], 64.0, 64.0).unwrap();
        let cell = t.responsible.iter().position(|&r| r).unwrap();
        if !(0..4).all(|ch| (0.05..=0.95).contains(&t.target[ch * 64 + cell])) {
            continue;
        }
        let mut raw = vec![-20.0; 6 * 64];
        for ch in 0..4 {
            raw[ch * 64 + cell] = logit(t.target[ch * 64 + cell]);
        }
        raw[4 * 64 + cell] = 20.0;
        raw[5 * 64 + cell] = 20.0;
        let raw = Tensor::new(vec![1, 6, 8, 8], raw).unwrap();
        let dets = decode_predictions(&raw, 0.5, &["a".to_string()], 64.0, 64.0).unwrap();
        assert_eq!(dets.len(), 1);
        let d = dets[0].bbox;
        let (cx, cy) = d.center();
        assert!((cx - (x + w / 2.0)).abs() <= 0.5 && (cy - (y + h / 2.0)).abs() <= 0.5);
        assert!((d.w / w - 1.0).abs() <= 0.01 && (d.h / h - 1.0).abs() <= 0.01, "{d:?} vs {b:?}");
        checked += 1;
    }
}

#[test]
fn memory_estimate_matches_layer_table_sum() {
    let spec = ModelSpec::Segmentation(EncDecSpec::default());
    let table = spec.layer_table().unwrap();
    let mut bytes = 8 * 4 * 3 * 64 * 64;
    for row in &table {
        bytes += 8 * 4 * row.output.iter().product::<usize>() as u64;
        for p in &row.params {
            bytes += 2 * 8 * p.iter().product::<usize>() as u64;
        }
    }
    assert_eq!(spec.memory_estimate(4).unwrap(), bytes);
    assert_eq!(estimate_memory(&[[4usize, 3, 64, 64]]), 8 * 4 * 3 * 64 * 64);
    let cfg = TrainConfig {
        memory_budget: bytes - 1,
        ..TrainConfig::segmentation(0)
    };
    let data = scenes(2, 0);
    let err = train_segmentation(&data, &data, &EncDecSpec::default(), &cfg).unwrap_err();
    assert!(err.to_string().contains("budget"), "{err}");
}

#[test]
fn flops_table_is_additive() {
    for spec in [
        ModelSpec::Segmentation(EncDecSpec::default()),
        ModelSpec::Gan(GanSpec::default()),
        ModelSpec::Detector(DetectorSpec::default()),
    ] {
        let r = spec.flops().unwrap();
        assert_eq!(r.total, r.layers.iter().map(|l| l.flops).sum::<u64>());
        assert!(r.total > 0);
    }
}

#[test]
fn model_json_round_trip_is_exact() {
    for spec in [
        ModelSpec::Segmentation(EncDecSpec::default()),
        ModelSpec::Gan(GanSpec::default()),
        ModelSpec::Detector(DetectorSpec::default()),
    ] {
        let m = Model::init(spec, 9).unwrap();
        let text = m.to_json();
        let back = Model::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), text);
    }
    assert!(matches!(Model::from_json("{}"), Err(ModelError::Format(_))));
}

#[test]
fn missing_labels_are_rejected() {
    let mut data = scenes(2, 4);
    data[1].mask = None;
    let r = train_segmentation(&data, &data, &EncDecSpec::default(), &TrainConfig::segmentation(0));
    assert!(matches!(r, Err(ModelError::MissingMask(id)) if id == data[1].id));
    let mut data = scenes(2, 4);
    data[0].shadow_free = None;
    let r = train_gan(&data, &data, &GanSpec::default(), &TrainConfig::gan(0));
    assert!(matches!(r, Err(ModelError::MissingPair(id)) if id == data[0].id));
}

fn one_step(cfg: TrainConfig) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 2,
        ..cfg
    }
}

#[test]
fn one_step_changes_loss_finitely() {
    let data = scenes(2, 6);
    let refs: Vec<&Sample> = data.iter().collect();
    let seg = train_segmentation(&data, &data, &EncDecSpec::default(), &one_step(TrainConfig::segmentation(1))).unwrap();
    let det = train_detector(&data, &data, &DetectorSpec::default(), &one_step(TrainConfig::detector(1))).unwrap();
    let gan = train_gan(&data, &data, &GanSpec::default(), &one_step(TrainConfig::gan(1))).unwrap();
    for out in [seg, det, gan] {
        assert!(out.last.all_finite());
        let init = Model::init(out.last.spec.clone(), 1).unwrap();
        let before = batch_loss(&init, &refs).unwrap();
        let after = batch_loss(&out.last, &refs).unwrap();
        assert!(before.is_finite() && after.is_finite());
        assert_ne!(before, after);
    }
}

#[test]
fn training_is_deterministic() {
    let data = scenes(6, 8);
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::detector(3)
    };
    let a = train_detector(&data, &data, &DetectorSpec::default(), &cfg).unwrap();
    let b = train_detector(&data, &data, &DetectorSpec::default(), &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.last.to_json(), b.last.to_json());

    let cfg = one_step(TrainConfig::gan(3));
    let a = train_gan(&data[..2], &data[..2], &GanSpec::default(), &cfg).unwrap();
    let b = train_gan(&data[..2], &data[..2], &GanSpec::default(), &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.last.to_json(), b.last.to_json());

    let cfg = one_step(TrainConfig::segmentation(3));
    let a = train_segmentation(&data[..2], &data[..2], &EncDecSpec::default(), &cfg).unwrap();
    let b = train_segmentation(&data[..2], &data[..2], &EncDecSpec::default(), &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.last.to_json(), b.last.to_json());
}

#[test]
fn zero_epochs_keep_the_initial_model() {
    let data = scenes(2, 2);
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::detector(5)
    };
    let out = train_detector(&data, &data, &DetectorSpec::default(), &cfg).unwrap();
    assert!(out.history.epochs.is_empty());
    assert_eq!(out.last, Model::init(ModelSpec::Detector(DetectorSpec::default()), 5).unwrap());
}

fn memorize(cfg: TrainConfig) -> TrainConfig {
    TrainConfig {
        epochs: 50,
        batch_size: 1,
        ..cfg
    }
}

#[test]
fn segmentation_memorizes_one_sample() {
    let data = scenes(1, 21);
    let out = train_segmentation(&data, &data, &EncDecSpec::default(), &memorize(TrainConfig::segmentation(2))).unwrap();
    let (first, last) = (out.history.baseline.train_loss, out.history.last().train_loss);
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn detector_memorizes_one_sample() {
    let data = scenes(1, 21);
    let out = train_detector(&data, &data, &DetectorSpec::default(), &memorize(TrainConfig::detector(2))).unwrap();
    let (first, last) = (out.history.baseline.train_loss, out.history.last().train_loss);
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn gan_discriminator_memorizes_one_sample() {
    let data = scenes(1, 21);
    let out = train_gan(&data, &data, &GanSpec::default(), &memorize(TrainConfig::gan(2))).unwrap();
    let first = out.history.baseline.extra["d_loss"];
    let last = out.history.last().extra["d_loss"];
    assert!(last < 0.5 * first, "{first} -> {last}");
    assert!(out.history.epochs.iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn decoded_scores_are_products_of_sigmoids() {
    let mut raw = vec![0.0; 6 * 64];
    raw[4 * 64] = 1.5;
    raw[5 * 64] = -0.5;
    let raw = Tensor::new(vec![1, 6, 8, 8], raw).unwrap();
    let dets = decode_predictions(&raw, 0.0, &["a".to_string()], 64.0, 64.0).unwrap();
    assert_eq!(dets[0].score, sigmoid(1.5) * sigmoid(-0.5));
    // σ(0) = 0.5 everywhere else: centred 32x32 box, clamped at the border
    assert_eq!(dets[0].bbox, BBox::new(0.0, 0.0, 20.0, 20.0));
}
