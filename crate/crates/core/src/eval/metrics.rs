//! Depth metrics: AbsRel, inlier ratio and per-frame median alignment.

use crate::error::{Error, Result};
use crate::supervision::median;

/// Default inlier threshold on `max(d̂/d, d/d̂)`.
pub const INLIER_THRESHOLD: f64 = 1.03;

fn check(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<usize> {
    if pred.len() != gt.len() || mask.len() != gt.len() {
        return Err(Error::InvalidInput(format!(
            "metric inputs differ in length: pred {}, gt {}, mask {}",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    let mut count = 0;
    for (&g, &m) in gt.iter().zip(mask) {
        if m {
            if !(g > 0.0) {
                return Err(Error::InvalidInput(format!("ground-truth depth {g} under the mask")));
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput("metric mask has no valid pixel".into()));
    }
    Ok(count)
}

/// Mean of `|d̂ − d| / d` over the mask, times 100.
pub fn absrel(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64> {
    let count = check(pred, gt, mask)?;
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((p, g), _)| (p - g).abs() / g)
        .sum();
    Ok(100.0 * sum / count as f64)
}

/// Percentage of masked pixels with `max(d̂/d, d/d̂) < thresh`.
pub fn inlier_ratio(pred: &[f64], gt: &[f64], mask: &[bool], thresh: f64) -> Result<f64> {
    if !(thresh > 1.0) {
        return Err(Error::InvalidInput(format!("inlier threshold must exceed 1, got {thresh}")));
    }
    let count = check(pred, gt, mask)?;
    let inliers = pred
        .iter()
        .zip(gt)
        .zip(mask)
        .filter(|((p, g), &m)| m && **p > 0.0 && (*p / *g).max(*g / *p) < thresh)
        .count();
    Ok(100.0 * inliers as f64 / count as f64)
}

/// `pred · median(gt) / median(pred)`, medians over the mask.
pub fn median_align(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    check(pred, gt, mask)?;
    let mut mp: Vec<f64> = pred.iter().zip(mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
    let mut mg: Vec<f64> = gt.iter().zip(mask).filter(|(_, &m)| m).map(|(g, _)| *g).collect();
    let mp = median(&mut mp);
    let mg = median(&mut mg);
    if !(mp > 0.0) || !mp.is_finite() {
        return Err(Error::InvalidInput(format!("cannot align a prediction with median {mp}")));
    }
    let ratio = mg / mp;
    Ok(pred.iter().map(|p| p * ratio).collect())
}

/// Valid-pixel mask of a ground-truth depth map.
pub fn depth_mask(gt: &[f64]) -> Vec<bool> {
    gt.iter().map(|&d| d > 0.0 && d.is_finite()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_values() {
        let gt = [1.0, 2.0, 4.0, 8.0];
        let mask = [true; 4];
        assert_eq!(absrel(&gt, &gt, &mask).unwrap(), 0.0);
        let p: Vec<f64> = gt.iter().map(|g| 1.1 * g).collect();
        assert!((absrel(&p, &gt, &mask).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(inlier_ratio(&gt, &gt, &mask, 1.03).unwrap(), 100.0);
        let p: Vec<f64> = gt.iter().map(|g| 1.05 * g).collect();
        assert_eq!(inlier_ratio(&p, &gt, &mask, 1.03).unwrap(), 0.0);
    }

    #[test]
    fn masked_pixels_are_ignored() {
        let gt = [1.0, 0.0, 2.0];
        let p = [1.0, 5.0, 2.2];
        let mask = depth_mask(&gt);
        assert!((absrel(&p, &gt, &mask).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(inlier_ratio(&p, &gt, &mask, 1.03).unwrap(), 50.0);
    }

    #[test]
    fn rejections() {
        assert!(absrel(&[1.0], &[1.0], &[false]).is_err());
        assert!(absrel(&[1.0], &[0.0], &[true]).is_err());
        assert!(inlier_ratio(&[1.0], &[1.0], &[true], 1.0).is_err());
        assert!(median_align(&[0.0, 0.0, 1.0], &[1.0; 3], &[true; 3]).is_err());
    }

    #[test]
    fn alignment_recovers_scaled_prediction() {
        let gt = [0.5, 1.5, 3.0, 7.0, 2.0];
        let mask = [true; 5];
        let p: Vec<f64> = gt.iter().map(|g| 4.0 * g).collect();
        assert_eq!(median_align(&p, &gt, &mask).unwrap(), gt.to_vec());
    }
}
