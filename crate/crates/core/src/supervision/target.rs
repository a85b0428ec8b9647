//! Scale-value calculation: the factor that maps a scene to unit mean point
//! distance from the first camera.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{anchor_to_first, unproject, Intrinsics, Pose};

/// Depths above this multiple of the scene's median valid depth are
/// clamped before the scale is computed.
pub const DEPTH_CAP_FACTOR: f64 = 50.0;

/// Metric scale of a scene and its targets in the normalised frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleTarget {
    /// Metres per normalised unit.
    pub s_gt: f64,
    /// Depth clamp in metres.
    pub depth_cap: f64,
    /// Normalised, clamped z-depth `[N, H, W]`; 0 marks invalid pixels.
    pub depth: Tensor,
    /// Normalised points in the first camera's frame, `[N, H, W, 3]`.
    pub points: Tensor,
    /// 1 for valid pixels, 0 otherwise, `[N, H, W]`.
    pub valid: Tensor,
    /// Anchored poses with translations divided by `s_gt`.
    pub poses: Vec<Pose>,
}

impl ScaleTarget {
    pub fn valid_count(&self) -> usize {
        self.valid.data().iter().filter(|&&m| m > 0.0).count()
    }

    /// Mean distance of valid normalised points from the origin.
    pub fn mean_point_norm(&self) -> f64 {
        let mut sum = 0.0;
        for (p, m) in self.points.data().chunks(3).zip(self.valid.data()) {
            if *m > 0.0 {
                sum += (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            }
        }
        sum / self.valid_count() as f64
    }
}

/// Median of a non-empty slice; the mean of the two middle values for even
/// lengths. Reorders the slice.
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let n = values.len();
    let (_, &mut hi, _) = values.select_nth_unstable_by(n / 2, f64::total_cmp);
    if n % 2 == 1 {
        hi
    } else {
        let lo = values[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Clamps depths at `cap_factor ×` the median valid depth, unprojects every
/// frame, moves the points into the first camera's frame and returns
/// `S = mean ‖X‖` with all targets divided by `S`.
pub fn compute_scale_target(depths: &[Vec<f64>], ks: &[Intrinsics], poses: &[Pose], cap_factor: f64) -> Result<ScaleTarget> {
    let n = depths.len();
    if n == 0 || ks.len() != n || poses.len() != n {
        return Err(Error::InvalidInput(format!(
            "scale target needs matching frame counts, got {n} depths, {} intrinsics, {} poses",
            ks.len(),
            poses.len()
        )));
    }
    if !(cap_factor > 0.0) {
        return Err(Error::InvalidInput(format!("cap factor must be positive, got {cap_factor}")));
    }
    let (w, h) = (ks[0].width, ks[0].height);
    if ks.iter().any(|k| k.width != w || k.height != h) {
        return Err(Error::InvalidInput("frames of one scene must share image extents".into()));
    }
    let mut valid_depths: Vec<f64> = depths.iter().flatten().copied().filter(|&d| d > 0.0).collect();
    if valid_depths.is_empty() {
        return Err(Error::InvalidInput("scene has no valid depth".into()));
    }
    let cap = cap_factor * median(&mut valid_depths);
    let anchored = anchor_to_first(poses);

    let mut points = Vec::with_capacity(n * w * h * 3);
    let mut valid = Vec::with_capacity(n * w * h);
    let mut clamped_all = Vec::with_capacity(n * w * h);
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((d, k), pose) in depths.iter().zip(ks).zip(&anchored) {
        let clamped: Vec<f64> = d.iter().map(|&z| z.min(cap)).collect();
        let pm = unproject(&clamped, k)?;
        for (p, &ok) in pm.points.iter().zip(&pm.valid) {
            let x = pose.transform_point(p);
            if ok {
                sum += x.norm();
                count += 1;
            }
            points.extend([x.x, x.y, x.z]);
            valid.push(if ok { 1.0 } else { 0.0 });
        }
        clamped_all.extend(clamped);
    }
    let s = sum / count as f64;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Degenerate(format!("scene scale {s} is not positive")));
    }
    let inv = 1.0 / s;
    Ok(ScaleTarget {
        s_gt: s,
        depth_cap: cap,
        depth: Tensor::new([n, h, w], clamped_all.iter().map(|d| d * inv).collect())?,
        points: Tensor::new([n, h, w, 3], points.iter().map(|p| p * inv).collect())?,
        valid: Tensor::new([n, h, w], valid)?,
        poses: anchored.iter().map(|p| p.scaled(inv)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn single_valid_pixel_at_principal_point() {
        let k = Intrinsics::new(4.0, 4.0, 1.5, 1.5, 3, 3).unwrap();
        let mut d = vec![0.0; 9];
        d[4] = 2.5;
        let t = compute_scale_target(&[d], &[k], &[Pose::identity()], DEPTH_CAP_FACTOR).unwrap();
        assert_eq!(t.s_gt, 2.5);
        assert_eq!(t.valid_count(), 1);
        assert!((t.mean_point_norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_scene_is_rejected() {
        let k = Intrinsics::new(4.0, 4.0, 1.5, 1.5, 3, 3).unwrap();
        assert!(compute_scale_target(&[vec![0.0; 9]], &[k], &[Pose::identity()], 50.0).is_err());
    }
}
