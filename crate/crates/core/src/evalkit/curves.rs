use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ap::class_ids;
use super::boxes::{Detection, GroundTruth};
use super::matching::pool_matches;
use super::{EvalError, Result};

/// Default confidence grid: 0.00 to 1.00 in steps of 0.01.
pub fn default_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Precision, recall and F1 swept over confidence thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// True positives per threshold.
    pub tp: Vec<usize>,
    /// False positives per threshold.
    pub fp: Vec<usize>,
    pub num_gt: usize,
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Sweeps `grid`, keeping detections with `score >= threshold`.
///
/// Greedy matching visits detections in score order, so dropping the
/// lowest-scored ones never changes the flags of the rest; one matching pass
/// at `iou_thr` serves the whole grid.
pub fn curves(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64, grid: &[f64]) -> CurveSet {
    let mut ranked: Vec<(f64, bool)> = Vec::new();
    for c in class_ids(dets, gts) {
        let d: Vec<&Detection> = dets.iter().filter(|x| x.class_id == c).collect();
        let g: Vec<&GroundTruth> = gts.iter().filter(|x| x.class_id == c).collect();
        ranked.extend(pool_matches(&d, &g, iou_thr).ranked);
    }
    let num_gt = gts.len();
    let mut out = CurveSet {
        thresholds: grid.to_vec(),
        precision: Vec::with_capacity(grid.len()),
        recall: Vec::with_capacity(grid.len()),
        f1: Vec::with_capacity(grid.len()),
        tp: Vec::with_capacity(grid.len()),
        fp: Vec::with_capacity(grid.len()),
        num_gt,
    };
    for &t in grid {
        let (tp, fp) = ranked
            .iter()
            .filter(|(s, _)| *s >= t)
            .fold((0usize, 0usize), |(tp, fp), &(_, hit)| if hit { (tp + 1, fp) } else { (tp, fp + 1) });
        let p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 };
        out.precision.push(p);
        out.recall.push(r);
        out.f1.push(f1_score(p, r));
        out.tp.push(tp);
        out.fp.push(fp);
    }
    out
}

impl CurveSet {
    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    /// `(recall, precision)` pairs for the PR view.
    pub fn pr_pairs(&self) -> Vec<(f64, f64)> {
        self.recall.iter().copied().zip(self.precision.iter().copied()).collect()
    }

    /// `threshold,precision,recall,f1` with six decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall,f1\n");
        for i in 0..self.len() {
            let _ = writeln!(
                s,
                "{:.6},{:.6},{:.6},{:.6}",
                self.thresholds[i], self.precision[i], self.recall[i], self.f1[i]
            );
        }
        s
    }

    /// Parses the CSV view; counts are not part of it and come back empty.
    pub fn from_csv(text: &str) -> Result<CurveSet> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("threshold,precision,recall,f1") {
            return Err(EvalError::Malformed("curves.csv header".into()));
        }
        let mut c = CurveSet {
            thresholds: vec![],
            precision: vec![],
            recall: vec![],
            f1: vec![],
            tp: vec![],
            fp: vec![],
            num_gt: 0,
        };
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| EvalError::Malformed(format!("curves.csv line {}: {e}", n + 2)))?;
            if vals.len() != 4 {
                return Err(EvalError::Malformed(format!("curves.csv line {}: expected 4 columns", n + 2)));
            }
            c.thresholds.push(vals[0]);
            c.precision.push(vals[1]);
            c.recall.push(vals[2]);
            c.f1.push(vals[3]);
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::BBox;

    #[test]
    fn perfect_detector_plateau() {
        let b = BBox::new(0.0, 0.0, 5.0, 5.0);
        let dets = vec![Detection {
            image_id: "a".into(),
            bbox: b,
            score: 0.8,
            class_id: 0,
        }];
        let gts = vec![GroundTruth {
            image_id: "a".into(),
            bbox: b,
            class_id: 0,
        }];
        let c = curves(&dets, &gts, 0.5, &default_grid());
        for i in 0..c.len() {
            if c.thresholds[i] <= 0.8 {
                assert_eq!((c.recall[i], c.f1[i]), (1.0, 1.0));
            } else {
                assert_eq!((c.precision[i], c.recall[i], c.f1[i]), (1.0, 0.0, 0.0));
            }
        }
    }

    #[test]
    fn no_detections_means_zero_recall() {
        let gts = vec![GroundTruth {
            image_id: "a".into(),
            bbox: BBox::new(0.0, 0.0, 5.0, 5.0),
            class_id: 0,
        }];
        let c = curves(&[], &gts, 0.5, &default_grid());
        assert!(c.recall.iter().all(|&r| r == 0.0));
        assert!(c.f1.iter().all(|&f| f == 0.0));
        assert!(c.precision.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn csv_has_fixed_columns() {
        let c = curves(&[], &[], 0.5, &[0.0, 0.5]);
        let csv = c.to_csv();
        assert_eq!(csv, "threshold,precision,recall,f1\n0.000000,1.000000,0.000000,0.000000\n0.500000,1.000000,0.000000,0.000000\n");
        let back = CurveSet::from_csv(&csv).unwrap();
        assert_eq!(back.to_csv(), csv);
        assert!(CurveSet::from_csv("a,b\n").is_err());
    }
}
