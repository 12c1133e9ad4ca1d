use std::collections::BTreeMap;

use super::boxes::{iou_unchecked, BBox, Detection, GroundTruth};

/// Outcome of greedy matching on one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchResult {
    /// TP flag per detection, in the caller's order.
    pub tp: Vec<bool>,
    /// Index of the claimed ground truth per detection.
    pub matched_gt: Vec<Option<usize>>,
    pub unmatched_gt: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.tp.iter().filter(|&&t| t).count()
    }

    pub fn false_positives(&self) -> usize {
        self.tp.len() - self.true_positives()
    }
}

/// Indices of `scores` sorted by descending score; ties keep input order.
pub(crate) fn score_order(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy matching for one image and class: in descending score order each
/// detection claims the still-unmatched ground truth with the highest IoU
/// (first index on ties), provided that IoU reaches `iou_thr`.
pub fn match_detections(dets: &[(BBox, f64)], gts: &[BBox], iou_thr: f64) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    let mut matched_gt = vec![None; dets.len()];
    for di in score_order(dets.iter().map(|d| d.1)) {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let v = iou_unchecked(&dets[di].0, gt);
            if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, _)) = best {
            taken[gi] = true;
            tp[di] = true;
            matched_gt[di] = Some(gi);
        }
    }
    MatchResult {
        tp,
        matched_gt,
        unmatched_gt: taken.iter().filter(|&&t| !t).count(),
    }
}

/// Detections of one class pooled across images with their TP flags.
#[derive(Clone, Debug, Default)]
pub(crate) struct PooledMatches {
    /// `(score, is_tp)` in descending score order.
    pub ranked: Vec<(f64, bool)>,
    pub num_gt: usize,
}

/// Matches per image, then pools; every input must share one class.
pub(crate) fn pool_matches(dets: &[&Detection], gts: &[&GroundTruth], iou_thr: f64) -> PooledMatches {
    let mut per_image: BTreeMap<&str, (Vec<usize>, Vec<BBox>)> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        per_image.entry(d.image_id.as_str()).or_default().0.push(i);
    }
    for g in gts {
        per_image.entry(g.image_id.as_str()).or_default().1.push(g.bbox);
    }
    let mut flags = vec![false; dets.len()];
    for (idx, boxes) in per_image.values() {
        let local: Vec<(BBox, f64)> = idx.iter().map(|&i| (dets[i].bbox, dets[i].score)).collect();
        let m = match_detections(&local, boxes, iou_thr);
        for (k, &i) in idx.iter().enumerate() {
            flags[i] = m.tp[k];
        }
    }
    let ranked = score_order(dets.iter().map(|d| d.score))
        .into_iter()
        .map(|i| (dets[i].score, flags[i]))
        .collect();
    PooledMatches {
        ranked,
        num_gt: gts.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_hit_is_one_tp() {
        let g = BBox::new(1.0, 1.0, 4.0, 4.0);
        let m = match_detections(&[(g, 0.9)], &[g], 0.5);
        assert_eq!((m.true_positives(), m.false_positives(), m.unmatched_gt), (1, 0, 0));
    }

    #[test]
    fn duplicate_detection_is_fp() {
        let g = BBox::new(1.0, 1.0, 4.0, 4.0);
        let near = BBox::new(1.2, 1.0, 4.0, 4.0);
        let m = match_detections(&[(near, 0.6), (g, 0.9)], &[g], 0.5);
        assert_eq!(m.tp, vec![false, true]);
        assert_eq!(m.unmatched_gt, 0);
    }

    #[test]
    fn score_ties_keep_insertion_order() {
        let g = BBox::new(0.0, 0.0, 4.0, 4.0);
        let m = match_detections(&[(g, 0.5), (g, 0.5)], &[g], 0.5);
        assert_eq!(m.tp, vec![true, false]);
    }
}
