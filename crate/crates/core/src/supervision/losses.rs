//! Camera, depth, point-map and scale losses.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::CameraParam;

pub const HUBER_DELTA: f64 = 0.1;
/// Weight of the `−log conf` regulariser.
pub const CONF_ALPHA: f64 = 0.2;

/// Values of the four loss terms of one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub camera: f64,
    pub depth: f64,
    pub pmap: f64,
    pub scale: f64,
    pub total: f64,
    /// Whether the scale term was supervised.
    pub scale_supervised: bool,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.camera, self.depth, self.pmap, self.scale, self.total].iter().all(|v| v.is_finite())
    }
}

/// Mean Huber loss over the nine camera components of all frames.
/// Predicted quaternions are flipped to `w ≥ 0` before differencing.
pub fn loss_camera(g: &mut Graph, pred: Var, target: &[CameraParam], delta: f64) -> Result<Var> {
    let n = target.len();
    if g.shape(pred) != [n, 9] {
        return Err(Error::InvalidInput(format!(
            "camera loss: prediction {:?} for {n} targets",
            g.shape(pred)
        )));
    }
    let signs: Vec<f64> = g
        .value(pred)
        .data()
        .chunks(9)
        .flat_map(|c| [if c[0] < 0.0 { -1.0 } else { 1.0 }; 4])
        .collect();
    let signs = g.constant(Tensor::new([n, 4], signs)?);
    let q = g.slice(pred, 1, 0, 4)?;
    let q = g.mul(q, signs)?;
    let rest = g.slice(pred, 1, 4, 9)?;
    let p = g.concat(&[q, rest], 1)?;
    let t: Vec<f64> = target.iter().flat_map(|c| c.to_array()).collect();
    let t = g.constant(Tensor::new([n, 9], t)?);
    let diff = g.sub(p, t)?;
    let h = g.huber(diff, delta)?;
    g.mean_all(h)
}

fn check_mask(mask: &Tensor) -> Result<f64> {
    let count = mask.data().iter().filter(|&&m| m > 0.0).count();
    if count == 0 {
        return Err(Error::InvalidInput("loss mask has no valid pixel".into()));
    }
    Ok(count as f64)
}

/// Mask of horizontally (`axis = 2`) or vertically (`axis = 1`) adjacent
/// valid pixel pairs of an `[N, H, W]` mask, and its count.
fn pair_mask(mask: &Tensor, axis: usize) -> Result<(Tensor, usize)> {
    let s = mask.shape();
    let (n, h, w) = (s[0], s[1], s[2]);
    let (ph, pw) = if axis == 2 { (h, w - 1) } else { (h - 1, w) };
    let m = mask.data();
    let mut out = Vec::with_capacity(n * ph * pw);
    for f in 0..n {
        for y in 0..ph {
            for x in 0..pw {
                let a = m[(f * h + y) * w + x];
                let b = if axis == 2 {
                    m[(f * h + y) * w + x + 1]
                } else {
                    m[(f * h + y + 1) * w + x]
                };
                out.push(if a > 0.0 && b > 0.0 { 1.0 } else { 0.0 });
            }
        }
    }
    let count = out.iter().filter(|&&v| v > 0.0).count();
    Ok((Tensor::new([n, ph, pw], out)?, count))
}

fn forward_difference(g: &mut Graph, x: Var, axis: usize) -> Result<Var> {
    let len = g.shape(x)[axis];
    let hi = g.slice(x, axis as isize, 1, len)?;
    let lo = g.slice(x, axis as isize, 0, len - 1)?;
    g.sub(hi, lo)
}

/// Sum over both image axes of the mean absolute difference of forward
/// differences, over pairs whose two pixels are valid. `pred` and `gt` are
/// `[N, H, W]` or `[N, H, W, 3]` (channels are summed).
fn gradient_term(g: &mut Graph, pred: Var, gt: Var, mask: &Tensor) -> Result<Var> {
    let mut total: Option<Var> = None;
    let rank = g.shape(pred).len();
    for axis in [2usize, 1] {
        if g.shape(pred)[axis] < 2 {
            continue;
        }
        let (pm, count) = pair_mask(mask, axis)?;
        if count == 0 {
            continue;
        }
        let dp = forward_difference(g, pred, axis)?;
        let dg = forward_difference(g, gt, axis)?;
        let r = g.sub(dp, dg)?;
        let r = g.abs(r)?;
        let r = if rank == 4 { g.sum(r, -1)? } else { r };
        let pm = g.constant(pm);
        let r = g.mul(r, pm)?;
        let s = g.sum_all(r)?;
        let s = g.scale(s, 1.0 / count as f64)?;
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    Ok(match total {
        Some(t) => t,
        None => g.scalar(0.0),
    })
}

/// Confidence-weighted residual with `−α·log conf`, averaged over valid
/// pixels, plus the gradient-matching term.
fn confident_regression(g: &mut Graph, residual: Var, conf: Var, pred: Var, gt: Var, mask: &Tensor, alpha: f64) -> Result<Var> {
    let count = check_mask(mask)?;
    let weighted = g.mul(conf, residual)?;
    let lc = g.log(conf)?;
    let reg = g.scale(lc, alpha)?;
    let per_pixel = g.sub(weighted, reg)?;
    let m = g.constant(mask.clone());
    let masked = g.mul(per_pixel, m)?;
    let s = g.sum_all(masked)?;
    let first = g.scale(s, 1.0 / count)?;
    let grad = gradient_term(g, pred, gt, mask)?;
    g.add(first, grad)
}

/// Depth loss over `[N, H, W]` maps; `mask` holds 1 for valid pixels.
pub fn loss_depth(g: &mut Graph, pred: Var, conf: Var, gt: &Tensor, mask: &Tensor, alpha: f64) -> Result<Var> {
    if g.shape(pred) != gt.shape() || g.shape(conf) != gt.shape() || mask.shape() != gt.shape() || gt.rank() != 3 {
        return Err(Error::InvalidInput(format!(
            "depth loss shapes: pred {:?}, conf {:?}, gt {:?}, mask {:?}",
            g.shape(pred),
            g.shape(conf),
            gt.shape(),
            mask.shape()
        )));
    }
    let gt = g.constant(gt.clone());
    let r = g.sub(pred, gt)?;
    let r = g.abs(r)?;
    confident_regression(g, r, conf, pred, gt, mask, alpha)
}

/// Point-map loss: per-pixel L1 over the three coordinates, confidence
/// `[N, H, W]`, gradient term summed over channels.
pub fn loss_pmap(g: &mut Graph, pred: Var, conf: Var, gt: &Tensor, mask: &Tensor, alpha: f64) -> Result<Var> {
    let ms = mask.shape();
    let ok = gt.rank() == 4
        && gt.shape()[3] == 3
        && gt.shape()[..3] == *ms
        && g.shape(pred) == gt.shape()
        && g.shape(conf) == ms;
    if !ok {
        return Err(Error::InvalidInput(format!(
            "point-map loss shapes: pred {:?}, conf {:?}, gt {:?}, mask {:?}",
            g.shape(pred),
            g.shape(conf),
            gt.shape(),
            ms
        )));
    }
    let gt = g.constant(gt.clone());
    let r = g.sub(pred, gt)?;
    let r = g.abs(r)?;
    let r = g.sum(r, -1)?;
    confident_regression(g, r, conf, pred, gt, mask, alpha)
}

/// `|log S_gt − log S_pred|`, or a constant 0 (no gradient) when the scene
/// is not supervised.
pub fn loss_scale(g: &mut Graph, s_pred: Var, s_gt: f64, supervise: bool) -> Result<Var> {
    if !supervise {
        return Ok(g.scalar(0.0));
    }
    let sp = g.value(s_pred).item()?;
    if !(sp > 0.0) || !(s_gt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "scale loss needs positive scales, got prediction {sp} and target {s_gt}"
        )));
    }
    let l = g.log(s_pred)?;
    let t = g.scalar(s_gt.ln());
    let d = g.sub(l, t)?;
    g.abs(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_loss_values() {
        let mut g = Graph::new();
        let s = g.leaf(Tensor::scalar(2.0), true);
        let l = loss_scale(&mut g, s, 2.0, true).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 0.0);
        let e = std::f64::consts::E;
        let s2 = g.leaf(Tensor::scalar(3.0 * e), true);
        let l = loss_scale(&mut g, s2, 3.0, true).unwrap();
        assert!((g.value(l).item().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unsupervised_scale_has_no_gradient() {
        let mut g = Graph::new();
        let s = g.leaf(Tensor::scalar(5.0), true);
        let l = loss_scale(&mut g, s, 1.0, false).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 0.0);
        g.backward(l).unwrap();
        assert!(g.grad(s).is_none_or(|t| t.data() == [0.0]));
    }

    #[test]
    fn empty_mask_is_rejected() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::full([1, 2, 2], 1.0), true);
        let c = g.leaf(Tensor::full([1, 2, 2], 1.0), true);
        let gt = Tensor::full([1, 2, 2], 1.0);
        let mask = Tensor::zeros([1, 2, 2]);
        assert!(loss_depth(&mut g, p, c, &gt, &mask, CONF_ALPHA).is_err());
    }
}
