//! AdamW with global-norm clipping and per-group linear warmup.

use serde::{Deserialize, Serialize};

use super::{ParamGroup, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient norm ceiling; `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 1.0,
        }
    }
}

/// First and second moments for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Number of applied updates.
    pub step: u64,
    /// Number of updates refused because of non-finite gradients.
    pub rejected: u64,
}

impl AdamWState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = |s: &ParamStore| s.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self {
            m: zeros(store),
            v: zeros(store),
            step: 0,
            rejected: 0,
        }
    }
}

/// Learning rates for the two parameter groups at the current step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupLr {
    pub scale_and_priors: f64,
    pub backbone: f64,
}

impl GroupLr {
    pub fn for_group(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::ScaleAndPriors => self.scale_and_priors,
            ParamGroup::Backbone => self.backbone,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Applied { grad_norm: f64, clipped: bool },
    Rejected,
}

pub fn global_grad_norm(store: &ParamStore) -> f64 {
    store
        .iter()
        .flat_map(|p| p.grad.data())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Applies one AdamW update from the gradients held in `store`.
///
/// Gradients are clipped to `cfg.clip_norm` by global norm before the moment
/// update. Weight decay is decoupled and only touches parameters flagged for
/// decay. A non-finite gradient anywhere rejects the whole step.
pub fn adamw_step(store: &mut ParamStore, state: &mut AdamWState, cfg: &AdamWConfig, lr: GroupLr) -> Result<StepOutcome> {
    if state.m.len() != store.len() {
        return Err(Error::InvalidInput(format!(
            "optimizer state holds {} tensors for {} parameters",
            state.m.len(),
            store.len()
        )));
    }
    for (p, m) in store.iter().zip(&state.m) {
        if p.value.shape() != m.shape() {
            return Err(Error::shape("adamw_step", p.value.shape(), m.shape()));
        }
    }
    if lr.scale_and_priors < 0.0 || lr.backbone < 0.0 {
        return Err(Error::InvalidInput("negative learning rate".into()));
    }
    if store.iter().any(|p| !p.grad.is_finite()) {
        state.rejected += 1;
        return Ok(StepOutcome::Rejected);
    }

    let norm = global_grad_norm(store);
    let clipped = norm > cfg.clip_norm;
    let factor = if clipped { cfg.clip_norm / norm } else { 1.0 };

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let rate = lr.for_group(p.group);
        let wd = if p.decay { cfg.weight_decay } else { 0.0 };
        let values = p.value.data_mut();
        let grads = p.grad.data();
        for (((w, &g), mi), vi) in values
            .iter_mut()
            .zip(grads)
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g = g * factor;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let update = (*mi / bc1) / ((*vi / bc2).sqrt() + cfg.eps);
            *w -= rate * (update + wd * *w);
        }
    }
    Ok(StepOutcome::Applied { grad_norm: norm, clipped })
}

/// Linear warmup from `start_lr` to `peak_lr`, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupSchedule {
    pub start_lr: f64,
    pub peak_lr: f64,
    pub warmup_steps: u64,
}

impl WarmupSchedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            return self.peak_lr;
        }
        let frac = step as f64 / self.warmup_steps as f64;
        self.start_lr + (self.peak_lr - self.start_lr) * frac
    }
}

pub const WARMUP_START_LR: f64 = 1e-8;
/// Fine-tuning peaks: scale head and prior encoders, then everything else.
pub const FINETUNE_PEAK_SCALE_AND_PRIORS: f64 = 5e-5;
pub const FINETUNE_PEAK_BACKBONE: f64 = 1e-6;

/// Warmup schedules for both parameter groups, optionally followed by a
/// cosine decay that reaches `final_fraction × peak` at the last step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrPlan {
    pub start_lr: f64,
    pub peak_scale_and_priors: f64,
    pub peak_backbone: f64,
    pub warmup_steps: u64,
    /// 1 keeps the peak after warmup.
    pub final_fraction: f64,
}

impl LrPlan {
    /// Peaks used when fine-tuning pretrained weights.
    pub fn finetune(warmup_steps: u64) -> Self {
        Self {
            start_lr: WARMUP_START_LR,
            peak_scale_and_priors: FINETUNE_PEAK_SCALE_AND_PRIORS,
            peak_backbone: FINETUNE_PEAK_BACKBONE,
            warmup_steps,
            final_fraction: 1.0,
        }
    }

    /// Peaks for training the toy model from random initialisation.
    pub fn from_scratch(warmup_steps: u64) -> Self {
        Self {
            start_lr: WARMUP_START_LR,
            peak_scale_and_priors: 2e-3,
            peak_backbone: 1e-3,
            warmup_steps,
            final_fraction: 0.02,
        }
    }

    /// Rates at `step` of a run of `total_steps`.
    pub fn at(&self, step: u64, total_steps: u64) -> GroupLr {
        let decay = if step <= self.warmup_steps || total_steps <= self.warmup_steps + 1 {
            1.0
        } else {
            let span = (total_steps - 1 - self.warmup_steps) as f64;
            let frac = ((step - self.warmup_steps) as f64 / span).min(1.0);
            let cos = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
            self.final_fraction + (1.0 - self.final_fraction) * cos
        };
        let sched = |peak: f64| {
            WarmupSchedule {
                start_lr: self.start_lr,
                peak_lr: peak,
                warmup_steps: self.warmup_steps,
            }
            .lr_at(step)
                * decay
        };
        GroupLr {
            scale_and_priors: sched(self.peak_scale_and_priors),
            backbone: sched(self.peak_backbone),
        }
    }
}

impl Default for LrPlan {
    fn default() -> Self {
        Self::from_scratch(100)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new([2], vec![1.0, -2.0]).unwrap(), ParamGroup::Backbone, true)
            .unwrap();
        s.add("h", Tensor::new([1], vec![0.5]).unwrap(), ParamGroup::ScaleAndPriors, false)
            .unwrap();
        s
    }

    #[test]
    fn zero_gradients_without_decay_leave_params_unchanged() {
        let mut s = store();
        let before: Vec<Tensor> = s.iter().map(|p| p.value.clone()).collect();
        let mut st = AdamWState::new(&s);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let out = adamw_step(&mut s, &mut st, &cfg, GroupLr { scale_and_priors: 0.1, backbone: 0.1 }).unwrap();
        assert!(matches!(out, StepOutcome::Applied { .. }));
        for (p, b) in s.iter().zip(before) {
            assert!(p.value.bit_eq(&b));
        }
    }

    #[test]
    fn nan_gradient_rejects_step() {
        let mut s = store();
        s.get_mut(super::super::ParamId(0)).grad.data_mut()[0] = f64::NAN;
        let mut st = AdamWState::new(&s);
        let before = s.get(super::super::ParamId(0)).value.clone();
        let out = adamw_step(&mut s, &mut st, &AdamWConfig::default(), GroupLr { scale_and_priors: 0.1, backbone: 0.1 }).unwrap();
        assert_eq!(out, StepOutcome::Rejected);
        assert_eq!(st.rejected, 1);
        assert_eq!(st.step, 0);
        assert!(s.get(super::super::ParamId(0)).value.bit_eq(&before));
    }

    #[test]
    fn clipping_bounds_the_first_step() {
        // With clipping the first Adam step is still ±lr per coordinate, but
        // the reported norm is the pre-clip value.
        let mut s = store();
        s.get_mut(super::super::ParamId(0)).grad.data_mut().copy_from_slice(&[30.0, 40.0]);
        let mut st = AdamWState::new(&s);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let out = adamw_step(&mut s, &mut st, &cfg, GroupLr { scale_and_priors: 0.0, backbone: 0.1 }).unwrap();
        match out {
            StepOutcome::Applied { grad_norm, clipped } => {
                assert!((grad_norm - 50.0).abs() < 1e-12);
                assert!(clipped);
            }
            StepOutcome::Rejected => panic!("rejected"),
        }
        let w = s.get(super::super::ParamId(0)).value.data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 2.1).abs() < 1e-6);
        // first moment holds the clipped gradient
        assert!((st.m[0].data()[0] - 0.1 * 0.6).abs() < 1e-12);
    }

    #[test]
    fn warmup_starts_at_floor_and_reaches_peak() {
        let plan = LrPlan::finetune(1000);
        let lr0 = plan.at(0, 5001);
        assert_eq!(lr0.scale_and_priors, 1e-8);
        assert_eq!(lr0.backbone, 1e-8);
        let mid = plan.at(500, 5001);
        assert!((mid.scale_and_priors - (1e-8 + (5e-5 - 1e-8) * 0.5)).abs() < 1e-20);
        let end = plan.at(1000, 5001);
        assert_eq!(end.scale_and_priors, 5e-5);
        assert_eq!(end.backbone, 1e-6);
        assert_eq!(plan.at(5000, 5001), end);
    }

    #[test]
    fn cosine_decay_reaches_final_fraction() {
        let plan = LrPlan::from_scratch(10);
        assert_eq!(plan.at(10, 111).backbone, 1e-3);
        assert!((plan.at(60, 111).backbone - 1e-3 * 0.51).abs() < 1e-15);
        assert!((plan.at(110, 111).backbone - 2e-5).abs() < 1e-18);
        assert!((plan.at(500, 111).backbone - 2e-5).abs() < 1e-18);
    }
}
