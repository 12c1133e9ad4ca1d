use serde::{Deserialize, Serialize};

use super::ap::{map50_95, per_class_ap};
use super::boxes::{Detection, GroundTruth};
use super::curves::{curves, default_grid, CurveSet};

/// Confidence threshold at which the TP/FP/FN counts are reported.
pub const COUNT_THRESHOLD: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: usize,
    /// `None` when the class had neither detections nor ground truth.
    pub ap50: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class_ap50: Vec<ClassAp>,
    pub map50: f64,
    pub map50_95: f64,
    pub counts: Counts,
    pub curves: CurveSet,
    pub flops: Option<u64>,
    pub mean_mask_iou: Option<f64>,
}

/// Full detection report on the default confidence grid at IoU 0.5.
pub fn evaluate_detections(dets: &[Detection], gts: &[GroundTruth]) -> MetricsReport {
    let per_class: Vec<ClassAp> = per_class_ap(dets, gts, 0.5)
        .into_iter()
        .map(|(class_id, ap50)| ClassAp { class_id, ap50 })
        .collect();
    let scored: Vec<f64> = per_class.iter().filter_map(|c| c.ap50).collect();
    let map50 = if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    let curve = curves(dets, gts, 0.5, &default_grid());
    let at = curves(dets, gts, 0.5, &[COUNT_THRESHOLD]);
    let counts = Counts {
        threshold: COUNT_THRESHOLD,
        tp: at.tp[0],
        fp: at.fp[0],
        fn_: gts.len() - at.tp[0],
    };
    MetricsReport {
        per_class_ap50: per_class,
        map50,
        map50_95: map50_95(dets, gts),
        counts,
        curves: curve,
        flops: None,
        mean_mask_iou: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::{map50, BBox};

    #[test]
    fn report_is_consistent_with_direct_metrics() {
        let mk = |i: usize| BBox::new(i as f64 * 10.0, 0.0, 6.0, 6.0);
        let gts: Vec<GroundTruth> = (0..4)
            .map(|i| GroundTruth {
                image_id: format!("img{}", i % 2),
                bbox: mk(i),
                class_id: i % 2,
            })
            .collect();
        let dets: Vec<Detection> = (0..3)
            .map(|i| Detection {
                image_id: format!("img{}", i % 2),
                bbox: mk(i),
                score: 0.3 + 0.2 * i as f64,
                class_id: i % 2,
            })
            .collect();
        let r = evaluate_detections(&dets, &gts);
        assert!((r.map50 - map50(&dets, &gts)).abs() < 1e-15);
        assert_eq!(r.counts.tp + r.counts.fn_, gts.len());
        assert_eq!(r.per_class_ap50.len(), 2);
    }
}
