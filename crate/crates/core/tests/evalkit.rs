use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shadekit::evalkit::{
    average_precision, curves, default_grid, map50, map50_95, mask_iou, match_detections, BBox, Detection, GroundTruth,
};

// ----------------------------------------------------------------------
// independent oracles

fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    ix * iy / (a.w * a.h + b.w * b.h - ix * iy)
}

/// Greedy-by-score flags for the `k` best detections, matched from scratch.
fn oracle_prefix_counts(dets: &[Detection], gts: &[GroundTruth], k: usize, thr: f64) -> usize {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let mut tp = 0;
    for &d in order.iter().take(k) {
        let mut best = None;
        let mut best_iou = -1.0;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] || gt.image_id != dets[d].image_id {
                continue;
            }
            let v = oracle_iou(&dets[d].bbox, &gt.bbox);
            if v >= thr && v > best_iou {
                best_iou = v;
                best = Some(g);
            }
        }
        if let Some(g) = best {
            used[g] = true;
            tp += 1;
        }
    }
    tp
}

/// Enumerates every score cut, builds the exact PR staircase and integrates
/// its envelope on the 101-point recall grid.
fn oracle_ap(dets: &[Detection], gts: &[GroundTruth], thr: f64) -> f64 {
    if gts.is_empty() {
        return if dets.is_empty() { 1.0 } else { 0.0 };
    }
    let points: Vec<(f64, f64)> = (1..=dets.len())
        .map(|k| {
            let tp = oracle_prefix_counts(dets, gts, k, thr) as f64;
            (tp / gts.len() as f64, tp / k as f64)
        })
        .collect();
    (0..=100)
        .map(|i| {
            let r = i as f64 / 100.0;
            points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 101.0
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    BBox::new(
        rng.random_range(0.0..40.0),
        rng.random_range(0.0..40.0),
        rng.random_range(2.0..20.0),
        rng.random_range(2.0..20.0),
    )
}

/// Ground truths plus detections that are mostly jittered copies of them.
fn random_instance(rng: &mut ChaCha8Rng, max_dets: usize, max_gts: usize) -> (Vec<Detection>, Vec<GroundTruth>) {
    let images = ["a", "b"];
    let gts: Vec<GroundTruth> = (0..rng.random_range(0..=max_gts))
        .map(|_| GroundTruth {
            image_id: images[rng.random_range(0..2)].to_string(),
            bbox: random_box(rng),
            class_id: 0,
        })
        .collect();
    let dets = (0..rng.random_range(0..=max_dets))
        .map(|_| {
            let (image_id, bbox) = if !gts.is_empty() && rng.random_bool(0.7) {
                let g = &gts[rng.random_range(0..gts.len())];
                let j = |rng: &mut ChaCha8Rng| rng.random_range(-3.0..3.0);
                let b = BBox::new(g.bbox.x + j(rng), g.bbox.y + j(rng), (g.bbox.w + j(rng)).max(1.0), (g.bbox.h + j(rng)).max(1.0));
                (g.image_id.clone(), b)
            } else {
                (images[rng.random_range(0..2)].to_string(), random_box(rng))
            };
            Detection {
                image_id,
                bbox,
                score: rng.random_range(0.0..1.0),
                class_id: 0,
            }
        })
        .collect();
    (dets, gts)
}

#[test]
fn average_precision_matches_staircase_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let (dets, gts) = random_instance(&mut rng, 20, 10);
        for thr in [0.5, 0.75] {
            let got = average_precision(&dets, &gts, thr);
            let want = oracle_ap(&dets, &gts, thr);
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }
}

/// Over every injective partial assignment, pick the one that is
/// lexicographically best in score order, ranking a claim by (IoU, lower GT index).
fn oracle_assignment(dets: &[(BBox, f64)], gts: &[BBox], thr: f64) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.partial_cmp(&dets[a].1).unwrap().then(a.cmp(&b)));

    fn key(assign: &[Option<usize>], order: &[usize], dets: &[(BBox, f64)], gts: &[BBox]) -> Vec<(f64, i64)> {
        order
            .iter()
            .map(|&d| match assign[d] {
                Some(g) => (oracle_iou(&dets[d].0, &gts[g]), -(g as i64)),
                None => (-1.0, 0),
            })
            .collect()
    }

    fn search(g: usize, assign: &mut Vec<Option<usize>>, best: &mut Option<(Vec<(f64, i64)>, Vec<Option<usize>>)>, ctx: (&[usize], &[(BBox, f64)], &[BBox], f64)) {
        let (order, dets, gts, thr) = ctx;
        if g == gts.len() {
            let k = key(assign, order, dets, gts);
            if best.as_ref().is_none_or(|(bk, _)| k.partial_cmp(bk) == Some(std::cmp::Ordering::Greater)) {
                *best = Some((k, assign.clone()));
            }
            return;
        }
        search(g + 1, assign, best, ctx);
        for d in 0..dets.len() {
            if assign[d].is_none() && oracle_iou(&dets[d].0, &gts[g]) >= thr {
                assign[d] = Some(g);
                search(g + 1, assign, best, ctx);
                assign[d] = None;
            }
        }
    }

    let mut best = None;
    search(0, &mut vec![None; dets.len()], &mut best, (&order, dets, gts, thr));
    best.unwrap().1
}

#[test]
fn matching_equals_exhaustive_assignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let (dets, gts) = random_instance(&mut rng, 20, 4);
        let dets: Vec<(BBox, f64)> = dets.iter().filter(|d| d.image_id == "a").map(|d| (d.bbox, d.score)).collect();
        let gts: Vec<BBox> = gts.iter().filter(|g| g.image_id == "a").map(|g| g.bbox).collect();
        let m = match_detections(&dets, &gts, 0.3);
        assert_eq!(m.matched_gt, oracle_assignment(&dets, &gts, 0.3));
        assert_eq!(m.unmatched_gt, gts.len() - m.true_positives());
    }
}

#[test]
fn shifted_detections_score_only_at_iou_half() {
    // 10x10 boxes shifted right by 3.2 px: IoU = 6.8/13.2 ≈ 0.515
    let gts: Vec<GroundTruth> = (0..5)
        .map(|i| GroundTruth {
            image_id: format!("img{i}"),
            bbox: BBox::new(10.0, 10.0, 10.0, 10.0),
            class_id: 0,
        })
        .collect();
    let dets: Vec<Detection> = gts
        .iter()
        .enumerate()
        .map(|(i, g)| Detection {
            image_id: g.image_id.clone(),
            bbox: BBox::new(g.bbox.x + 3.2, g.bbox.y, 10.0, 10.0),
            score: 0.5 + 0.05 * i as f64,
            class_id: 0,
        })
        .collect();
    let v = oracle_iou(&dets[0].bbox, &gts[0].bbox);
    assert!(v > 0.5 && v < 0.55);
    assert_eq!(map50(&dets, &gts), 1.0);
    assert!((map50_95(&dets, &gts) - 0.1).abs() < 1e-12);
    for t in [0.55, 0.7, 0.95] {
        assert_eq!(oracle_ap(&dets, &gts, t), 0.0);
    }
}

#[test]
fn perfect_detections_give_unit_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gts: Vec<GroundTruth> = (0..12)
        .map(|i| GroundTruth {
            image_id: format!("img{}", i % 4),
            bbox: random_box(&mut rng),
            class_id: i % 3,
        })
        .collect();
    let dets: Vec<Detection> = gts
        .iter()
        .map(|g| Detection {
            image_id: g.image_id.clone(),
            bbox: g.bbox,
            score: 0.9,
            class_id: g.class_id,
        })
        .collect();
    assert_eq!(map50(&dets, &gts), 1.0);
    assert_eq!(map50_95(&dets, &gts), 1.0);
}

#[test]
fn recall_never_increases_with_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let (dets, gts) = random_instance(&mut rng, 20, 10);
        let c = curves(&dets, &gts, 0.5, &default_grid());
        for i in 1..c.len() {
            assert!(c.recall[i] <= c.recall[i - 1]);
        }
        for i in 0..c.len() {
            assert!(c.tp[i] <= gts.len());
            assert!([c.precision[i], c.recall[i], c.f1[i]].iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn mask_iou_matches_pixel_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let n = 16 * 16;
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let gt: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let mut inter = 0;
        let mut union = 0;
        for i in 0..n {
            let p = pred[i] >= 0.5;
            let g = gt[i] == 1.0;
            if p && g {
                inter += 1;
            }
            if p || g {
                union += 1;
            }
        }
        assert_eq!(mask_iou(&pred, &gt, 0.5).unwrap(), inter as f64 / union as f64);
    }
}

proptest! {
    #[test]
    fn ap_depends_only_on_score_ranks(seed in 0u64..10_000, scale in 0.1f64..0.9, offset in 0.0f64..0.1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dets, gts) = random_instance(&mut rng, 15, 6);
        let rescaled: Vec<Detection> = dets.iter().map(|d| Detection { score: d.score * scale + offset, ..d.clone() }).collect();
        let a = average_precision(&dets, &gts, 0.5);
        let b = average_precision(&rescaled, &gts, 0.5);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(a, b);
    }
}
