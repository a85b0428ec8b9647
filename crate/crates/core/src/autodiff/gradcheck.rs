//! Central finite-difference verification of analytic gradients.

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;

/// Below this magnitude gradients are compared on an absolute scale; the
/// relative error of two numbers both near zero carries no information.
pub const GRAD_SCALE_FLOOR: f64 = 1e-3;

/// Rounding noise of a function value relative to `max(|f|, 1)`. One-sided
/// slope gaps below `KINK_NOISE · max(|f|, 1) / step` are ignored.
const KINK_NOISE: f64 = 1e-13;

/// A coordinate sits on a kink when the one-sided slope gap at the step is
/// more than this fraction of the gap at ten times the step. On smooth
/// functions the gap grows with the step; at a kink it does not.
const KINK_PERSISTENCE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateError {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    pub checked: usize,
    /// Coordinates skipped because the function has a kink there.
    pub excluded: Vec<usize>,
    pub worst: Option<CoordinateError>,
    /// First coordinate whose value or gradient was not finite.
    pub non_finite: Option<usize>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn worst_rel_error(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_error)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_SCALE_FLOOR)
}

struct Collector {
    tolerance: f64,
    report: GradCheckReport,
}

impl Collector {
    fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            report: GradCheckReport {
                passed: true,
                checked: 0,
                excluded: Vec::new(),
                worst: None,
                non_finite: None,
                tolerance,
            },
        }
    }

    /// `probe(d)` evaluates the function with the coordinate moved by `d`.
    fn observe(
        &mut self,
        index: usize,
        analytic: f64,
        center: f64,
        step: f64,
        mut probe: impl FnMut(f64) -> Result<f64>,
    ) -> Result<()> {
        let (plus, minus) = (probe(step)?, probe(-step)?);
        if !(analytic.is_finite() && minus.is_finite() && center.is_finite() && plus.is_finite()) {
            if self.report.non_finite.is_none() {
                self.report.non_finite = Some(index);
            }
            self.report.passed = false;
            return Ok(());
        }
        let gap = |plus: f64, minus: f64, h: f64| ((plus - center) - (center - minus)) / h;
        let near = gap(plus, minus, step);
        if near.abs() > KINK_NOISE * center.abs().max(1.0) / step {
            let coarse = 10.0 * step;
            let far = gap(probe(coarse)?, probe(-coarse)?, coarse);
            if near.abs() > KINK_PERSISTENCE * far.abs() {
                self.report.excluded.push(index);
                return Ok(());
            }
        }
        let numeric = (plus - minus) / (2.0 * step);
        let rel = relative_error(analytic, numeric);
        self.report.checked += 1;
        if self.report.worst.as_ref().is_none_or(|w| rel > w.rel_error) {
            self.report.worst = Some(CoordinateError {
                index,
                analytic,
                numeric,
                rel_error: rel,
            });
        }
        if rel >= self.tolerance {
            self.report.passed = false;
        }
        Ok(())
    }
}

/// Checks the gradient of the scalar `f(x)` with respect to every
/// coordinate of `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    assert!(step > 0.0, "step must be positive");
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let loss = f(&mut g, xv)?;
    let center = g.value(loss).item()?;
    g.backward(loss)?;
    let analytic = g.grad(xv).unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::inference();
        let v = g.leaf(t, false);
        let l = f(&mut g, v)?;
        g.value(l).item()
    };

    let mut c = Collector::new(tolerance);
    for i in 0..x.numel() {
        c.observe(i, analytic.data()[i], center, step, |d| {
            let mut xd = x.clone();
            xd.data_mut()[i] += d;
            eval(xd)
        })?;
    }
    Ok(c.report)
}

/// Checks sampled parameter coordinates of a scalar loss built from `store`.
/// The report's coordinate index is the position in `coords`.
pub fn finite_diff_check_params<F>(
    f: F,
    store: &ParamStore,
    coords: &[(ParamId, usize)],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let center = g.value(loss).item()?;
    g.backward(loss)?;
    let mut grads = store.clone();
    grads.zero_grad();
    g.accumulate_param_grads(&mut grads);

    let mut work = store.clone();
    let mut c = Collector::new(tolerance);
    for (k, &(id, i)) in coords.iter().enumerate() {
        let orig = work.get(id).value.data()[i];
        c.observe(k, grads.get(id).grad.data()[i], center, step, |d| {
            work.get_mut(id).value.data_mut()[i] = orig + d;
            let mut g = Graph::inference();
            let l = f(&mut g, &work)?;
            g.value(l).item()
        })?;
        work.get_mut(id).value.data_mut()[i] = orig;
    }
    Ok(c.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_away_from_kink_passes() {
        let x = Tensor::new([3], vec![-2.0, 0.7, 3.0]).unwrap();
        let r = finite_diff_check(
            |g, x| {
                let h = g.huber(x, 1.0)?;
                g.sum_all(h)
            },
            &x,
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.excluded.is_empty());
    }

    #[test]
    fn abs_at_zero_is_excluded() {
        let x = Tensor::new([2], vec![0.0, 1.5]).unwrap();
        let r = finite_diff_check(
            |g, x| {
                let a = g.abs(x)?;
                g.sum_all(a)
            },
            &x,
            1e-6,
            1e-5,
        )
        .unwrap();
        assert_eq!(r.excluded, vec![0]);
        assert!(r.passed);
        assert_eq!(r.checked, 1);
    }

    #[test]
    fn small_kink_under_a_large_slope_is_excluded() {
        let x = Tensor::new([2], vec![0.0, 0.3]).unwrap();
        let r = finite_diff_check(
            |g, x| {
                let r = g.relu(x)?;
                let r = g.scale(r, 1e-3)?;
                let s = g.scale(x, 5.0)?;
                let sq = g.mul(s, x)?;
                let y = g.add(sq, r)?;
                g.sum_all(y)
            },
            &x,
            1e-6,
            1e-5,
        )
        .unwrap();
        assert_eq!(r.excluded, vec![0]);
        assert!(r.passed && r.checked == 1, "{r:?}");
    }

    #[test]
    fn non_finite_values_fail_with_location() {
        let x = Tensor::new([2], vec![1.0, -1.0]).unwrap();
        let r = finite_diff_check(
            |g, x| {
                let l = g.log(x)?;
                g.sum_all(l)
            },
            &x,
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(!r.passed);
        assert_eq!(r.non_finite, Some(0));
    }
}
