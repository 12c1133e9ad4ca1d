use std::collections::BTreeSet;

use super::boxes::{Detection, GroundTruth};
use super::matching::{pool_matches, PooledMatches};

/// Recall grid points used for interpolation: 0.00, 0.01, ..., 1.00.
pub const RECALL_POINTS: usize = 101;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// 101-point interpolated AP of one pooled, score-ranked match list.
/// `None` when there are neither detections nor ground truths.
pub(crate) fn ap_from_pooled(p: &PooledMatches) -> Option<f64> {
    if p.num_gt == 0 {
        return if p.ranked.is_empty() { None } else { Some(0.0) };
    }
    let mut tp = 0usize;
    let mut tps = Vec::with_capacity(p.ranked.len());
    let mut precision = Vec::with_capacity(p.ranked.len());
    for (i, &(_, is_tp)) in p.ranked.iter().enumerate() {
        tp += usize::from(is_tp);
        tps.push(tp);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    // envelope: best precision at any equal-or-higher recall
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    // first ranked position whose recall tp/num_gt reaches k/100, compared exactly in integers
    let mut total = 0.0;
    let mut pos = 0;
    for k in 0..RECALL_POINTS {
        while pos < tps.len() && tps[pos] * 100 < k * p.num_gt {
            pos += 1;
        }
        if pos < tps.len() {
            total += precision[pos];
        }
    }
    Some(total / RECALL_POINTS as f64)
}

/// Average precision for a single class. Returns 1.0 when both lists are
/// empty; that case is skipped by the class means.
pub fn average_precision(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> f64 {
    let d: Vec<&Detection> = dets.iter().collect();
    let g: Vec<&GroundTruth> = gts.iter().collect();
    ap_from_pooled(&pool_matches(&d, &g, iou_thr)).unwrap_or(1.0)
}

pub(crate) fn class_ids(dets: &[Detection], gts: &[GroundTruth]) -> BTreeSet<usize> {
    dets.iter().map(|d| d.class_id).chain(gts.iter().map(|g| g.class_id)).collect()
}

/// AP per class id at one IoU threshold; `None` marks a skipped class.
pub fn per_class_ap(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> Vec<(usize, Option<f64>)> {
    class_ids(dets, gts)
        .into_iter()
        .map(|c| {
            let d: Vec<&Detection> = dets.iter().filter(|x| x.class_id == c).collect();
            let g: Vec<&GroundTruth> = gts.iter().filter(|x| x.class_id == c).collect();
            (c, ap_from_pooled(&pool_matches(&d, &g, iou_thr)))
        })
        .collect()
}

fn class_mean(aps: &[(usize, Option<f64>)]) -> f64 {
    let vals: Vec<f64> = aps.iter().filter_map(|a| a.1).collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Class-mean AP at one IoU threshold.
pub fn mean_ap(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> f64 {
    class_mean(&per_class_ap(dets, gts, iou_thr))
}

pub fn map50(dets: &[Detection], gts: &[GroundTruth]) -> f64 {
    mean_ap(dets, gts, 0.5)
}

/// Class-mean AP averaged over IoU thresholds 0.50 to 0.95.
pub fn map50_95(dets: &[Detection], gts: &[GroundTruth]) -> f64 {
    let thresholds = coco_iou_thresholds();
    thresholds.iter().map(|&t| mean_ap(dets, gts, t)).sum::<f64>() / thresholds.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::BBox;

    fn gt(img: &str, b: BBox) -> GroundTruth {
        GroundTruth {
            image_id: img.into(),
            bbox: b,
            class_id: 0,
        }
    }

    fn det(img: &str, b: BBox, score: f64) -> Detection {
        Detection {
            image_id: img.into(),
            bbox: b,
            score,
            class_id: 0,
        }
    }

    #[test]
    fn perfect_and_empty() {
        let b = BBox::new(0.0, 0.0, 5.0, 5.0);
        assert_eq!(average_precision(&[det("a", b, 0.9)], &[gt("a", b)], 0.5), 1.0);
        assert_eq!(average_precision(&[], &[gt("a", b)], 0.5), 0.0);
        assert_eq!(average_precision(&[det("a", b, 0.9)], &[], 0.5), 0.0);
        assert_eq!(average_precision(&[], &[], 0.5), 1.0);
        assert!(per_class_ap(&[], &[], 0.5).is_empty());
    }

    #[test]
    fn hand_enumerated_staircase() {
        let g1 = BBox::new(0.0, 0.0, 5.0, 5.0);
        let g2 = BBox::new(20.0, 20.0, 5.0, 5.0);
        let miss = BBox::new(40.0, 0.0, 5.0, 5.0);
        let dets = [det("a", g1, 0.9), det("a", miss, 0.8), det("a", g2, 0.7)];
        let ap = average_precision(&dets, &[gt("a", g1), gt("a", g2)], 0.5);
        assert!((ap - (51.0 + 50.0 * 2.0 / 3.0) / 101.0).abs() < 1e-12);
        assert!((ap - 0.8350).abs() < 1e-4);
    }

    #[test]
    fn matching_is_per_image() {
        let b = BBox::new(0.0, 0.0, 5.0, 5.0);
        // same coordinates on a different image never match
        assert_eq!(average_precision(&[det("b", b, 0.9)], &[gt("a", b)], 0.5), 0.0);
    }

    #[test]
    fn thresholds_grid() {
        let t = coco_iou_thresholds();
        assert_eq!(t[0], 0.5);
        assert_eq!(t[9], 0.95);
    }
}
