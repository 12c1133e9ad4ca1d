//! Detection and segmentation metrics.
//!
//! mAP follows IoU-threshold semantics with 101-point interpolation; the
//! confidence sweep is exposed separately through [`curves`].

mod ap;
mod boxes;
mod curves;
pub mod flops;
mod mask;
mod matching;
mod report;

use thiserror::Error;

pub use ap::{average_precision, coco_iou_thresholds, map50, map50_95, mean_ap, per_class_ap, RECALL_POINTS};
pub use boxes::{iou, BBox, Detection, GroundTruth};
pub use curves::{curves, default_grid, f1_score, CurveSet};
pub use flops::{flops, layer_flops, FlopsReport, LayerDesc, LayerKind};
pub use mask::mask_iou;
pub use matching::{match_detections, MatchResult};
pub use report::{evaluate_detections, ClassAp, Counts, MetricsReport, COUNT_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("degenerate box {0:?}: width and height must be positive")]
    DegenerateBox(BBox),
    #[error("mask shape mismatch: expected {expected} pixels, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("malformed input: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;
