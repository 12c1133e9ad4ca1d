use super::{EvalError, Result};

/// IoU of `pred >= bin_thr` against the binary `gt`; 1.0 when both are empty.
pub fn mask_iou(pred: &[f64], gt: &[f64], bin_thr: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(EvalError::ShapeMismatch {
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let (a, b) = (p >= bin_thr, g >= 0.5);
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let gt = [1.0, 1.0, 0.0, 0.0];
        assert_eq!(mask_iou(&gt, &gt, 0.5).unwrap(), 1.0);
        assert_eq!(mask_iou(&[1.0; 4], &gt, 0.5).unwrap(), 0.5);
        assert_eq!(mask_iou(&[0.0; 4], &[0.0; 4], 0.5).unwrap(), 1.0);
        assert!(mask_iou(&[0.0; 3], &gt, 0.5).is_err());
    }
}
