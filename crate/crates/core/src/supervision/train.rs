//! Training step and the resumable training loop.

use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{loss_camera, loss_depth, loss_pmap, loss_scale, LossReport, CONF_ALPHA, HUBER_DELTA};
use super::target::ScaleTarget;
use crate::autodiff::{adamw_step, AdamWConfig, AdamWState, Checkpoint, Graph, GroupLr, LrPlan, StepOutcome, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::CameraParam;
use crate::model::UniScaleModel;
use crate::prior::{PriorBundle, PriorConfig, PriorProbabilities};
use crate::synth::SceneSample;

/// A scene with everything the losses need precomputed.
#[derive(Clone, Debug)]
pub struct TrainingScene {
    pub sample: SceneSample,
    /// `[N, 3, H, W]`
    pub images: Tensor,
    pub target: ScaleTarget,
    /// Camera targets in the normalised frame.
    pub cameras: Vec<CameraParam>,
}

impl TrainingScene {
    pub fn new(sample: SceneSample) -> Result<Self> {
        let target = sample.scale_target()?;
        let cameras = target
            .poses
            .iter()
            .map(|p| CameraParam::from_pose(p, &sample.intrinsics, 1.0))
            .collect::<Result<_>>()?;
        Ok(Self {
            images: sample.images_tensor()?,
            target,
            cameras,
            sample,
        })
    }

    pub fn frames(&self) -> usize {
        self.sample.frames()
    }

    /// All priors available for the scene; poses in the scene's own units.
    pub fn priors(&self) -> Result<PriorBundle> {
        PriorBundle::new(Some(self.sample.poses.clone()), Some(self.sample.intrinsics_list()))
    }

    pub fn metric(&self) -> bool {
        self.sample.metric
    }
}

/// Builds the total loss of one scene under a prior configuration.
pub fn scene_loss(model: &UniScaleModel, g: &mut Graph, scene: &TrainingScene, cfg: &PriorConfig) -> Result<(Var, LossReport, Option<f64>)> {
    let priors = scene.priors()?.filtered(cfg.use_pose, cfg.use_intrinsics);
    let out = model.forward(g, &scene.images, &priors)?;
    let t = &scene.target;
    let lc = loss_camera(g, out.cameras, &scene.cameras, HUBER_DELTA)?;
    let ld = loss_depth(g, out.depth, out.depth_conf, &t.depth, &t.valid, CONF_ALPHA)?;
    let lp = loss_pmap(g, out.points, out.point_conf, &t.points, &t.valid, CONF_ALPHA)?;
    let supervise = cfg.supervise_scale && scene.metric();
    let (ls, s_pred) = match out.scale {
        Some(s) => (loss_scale(g, s, t.s_gt, supervise)?, Some(g.value(s).item()?)),
        None => (g.scalar(0.0), None),
    };
    let a = g.add(lc, ld)?;
    let b = g.add(lp, ls)?;
    let total = g.add(a, b)?;
    let v = |g: &Graph, x: Var| g.value(x).item();
    let report = LossReport {
        camera: v(g, lc)?,
        depth: v(g, ld)?,
        pmap: v(g, lp)?,
        scale: v(g, ls)?,
        total: v(g, total)?,
        scale_supervised: supervise && out.scale.is_some(),
    };
    Ok((total, report, s_pred))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Applied,
    /// Non-finite gradients; the optimizer refused the update.
    Rejected,
    /// Non-finite loss; no backward pass was run.
    Skipped,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub loss: LossReport,
    pub status: StepStatus,
    pub grad_norm: Option<f64>,
    pub s_pred: Option<f64>,
}

/// Forward, loss, backward and one clipped AdamW update.
pub fn train_step(
    model: &mut UniScaleModel,
    state: &mut AdamWState,
    scene: &TrainingScene,
    prior_cfg: &PriorConfig,
    lr: GroupLr,
    adamw: &AdamWConfig,
) -> Result<StepResult> {
    let mut g = Graph::new();
    let (total, loss, s_pred) = scene_loss(model, &mut g, scene, prior_cfg)?;
    if !loss.is_finite() {
        return Ok(StepResult {
            loss,
            status: StepStatus::Skipped,
            grad_norm: None,
            s_pred,
        });
    }
    g.backward(total)?;
    let store = model.params_mut();
    store.zero_grad();
    g.accumulate_param_grads(store);
    let (status, grad_norm) = match adamw_step(store, state, adamw, lr)? {
        StepOutcome::Applied { grad_norm, .. } => (StepStatus::Applied, Some(grad_norm)),
        StepOutcome::Rejected => (StepStatus::Rejected, None),
    };
    Ok(StepResult {
        loss,
        status,
        grad_norm,
        s_pred,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub seed: u64,
    pub lr: LrPlan,
    pub optimizer: AdamWConfig,
    pub priors: PriorProbabilities,
    /// Inclusive range of frames drawn per step; all frames when absent.
    pub frames: Option<[usize; 2]>,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            seed: 0,
            lr: LrPlan::default(),
            optimizer: AdamWConfig::default(),
            priors: PriorProbabilities::default(),
            frames: None,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        if let Some([lo, hi]) = self.frames {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("frames range [{lo}, {hi}] is invalid")));
            }
        }
        if !(0.0..=1.0).contains(&self.lr.final_fraction) {
            return Err(Error::Config(format!("lr.final_fraction {} outside [0, 1]", self.lr.final_fraction)));
        }
        if self.lr.peak_backbone < 0.0 || self.lr.peak_scale_and_priors < 0.0 || self.lr.start_lr < 0.0 {
            return Err(Error::Config("learning rates must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Random choices of one step, derived from the seed and the step index
/// alone so that a resumed run makes the same choices.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    pub scene: usize,
    pub priors: PriorConfig,
    /// Selected frames, or `None` for all.
    pub frames: Option<Vec<usize>>,
}

const EPOCH_STREAM_SALT: u64 = 0x5eed_5ce4e;

pub fn plan_step(config: &TrainConfig, step: u64, scenes: &[TrainingScene]) -> StepPlan {
    let n = scenes.len();
    let epoch = step / n as u64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut erng = ChaCha8Rng::seed_from_u64(config.seed ^ EPOCH_STREAM_SALT);
    erng.set_stream(epoch);
    order.shuffle(&mut erng);
    let scene = order[(step % n as u64) as usize];

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(step);
    let priors = config.priors.sample(&mut rng, scenes[scene].metric());
    let total = scenes[scene].frames();
    let frames = config.frames.and_then(|[lo, hi]| {
        let hi = hi.min(total);
        let lo = lo.min(hi);
        let k = rng.random_range(lo..=hi);
        if k == total {
            return None;
        }
        let mut idx = index::sample(&mut rng, total, k).into_vec();
        idx.sort_unstable();
        Some(idx)
    });
    StepPlan { scene, priors, frames }
}

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub seed: u64,
    pub scene: usize,
    pub frames: usize,
    pub lr_scale_and_priors: f64,
    pub lr_backbone: f64,
    pub use_pose: bool,
    pub use_intrinsics: bool,
    pub status: StepStatus,
    pub grad_norm: Option<f64>,
    pub s_pred: Option<f64>,
    pub s_gt: f64,
    #[serde(flatten)]
    pub loss: LossReport,
}

/// Training progress stored in checkpoint headers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub step: u64,
    pub adam_step: u64,
    pub rejected: u64,
    pub skipped: u64,
    pub config: TrainConfig,
}

pub struct Trainer {
    pub model: UniScaleModel,
    pub state: AdamWState,
    pub config: TrainConfig,
    /// Steps taken so far, including skipped and rejected ones.
    pub step: u64,
    pub skipped: u64,
}

impl Trainer {
    pub fn new(model: UniScaleModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = AdamWState::new(model.params());
        Ok(Self {
            model,
            state,
            config,
            step: 0,
            skipped: 0,
        })
    }

    /// Runs the next step on one of `scenes`.
    pub fn step(&mut self, scenes: &[TrainingScene]) -> Result<StepLog> {
        if scenes.is_empty() {
            return Err(Error::InvalidInput("training needs at least one scene".into()));
        }
        let plan = plan_step(&self.config, self.step, scenes);
        let lr = self.config.lr.at(self.step, self.config.steps);
        let subset;
        let scene = match &plan.frames {
            Some(idx) => {
                subset = TrainingScene::new(scenes[plan.scene].sample.select_frames(idx)?)?;
                &subset
            }
            None => &scenes[plan.scene],
        };
        let r = train_step(
            &mut self.model,
            &mut self.state,
            scene,
            &plan.priors,
            lr,
            &self.config.optimizer,
        )?;
        if r.status == StepStatus::Skipped {
            self.skipped += 1;
        }
        let log = StepLog {
            step: self.step,
            seed: self.config.seed,
            scene: plan.scene,
            frames: scene.frames(),
            lr_scale_and_priors: lr.scale_and_priors,
            lr_backbone: lr.backbone,
            use_pose: plan.priors.use_pose,
            use_intrinsics: plan.priors.use_intrinsics,
            status: r.status,
            grad_norm: r.grad_norm,
            s_pred: r.s_pred,
            s_gt: scene.target.s_gt,
            loss: r.loss,
        };
        self.step += 1;
        Ok(log)
    }

    /// Steps until `until` steps have been taken, writing one JSON line per
    /// step to `log` and calling `on_checkpoint` every
    /// `checkpoint_every` steps.
    pub fn run(
        &mut self,
        scenes: &[TrainingScene],
        until: u64,
        mut log: Option<&mut dyn Write>,
        mut on_checkpoint: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<()> {
        while self.step < until {
            let entry = self.step(scenes)?;
            if let Some(w) = log.as_deref_mut() {
                serde_json::to_writer(&mut *w, &entry)?;
                w.write_all(b"\n")?;
            }
            if self.config.checkpoint_every > 0 && self.step % self.config.checkpoint_every == 0 {
                on_checkpoint(self)?;
            }
        }
        Ok(())
    }

    pub fn train_state(&self) -> TrainState {
        TrainState {
            step: self.step,
            adam_step: self.state.step,
            rejected: self.state.rejected,
            skipped: self.skipped,
            config: self.config.clone(),
        }
    }

    /// Parameters plus optimizer moments (`adam_m/<name>`, `adam_v/<name>`).
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = self.model.to_checkpoint(Some(serde_json::to_value(self.train_state())?))?;
        let names: Vec<String> = self.model.params().iter().map(|p| p.name.clone()).collect();
        for (name, m) in names.iter().zip(&self.state.m) {
            ckpt.records.push((format!("adam_m/{name}"), m.clone()));
        }
        for (name, v) in names.iter().zip(&self.state.v) {
            ckpt.records.push((format!("adam_v/{name}"), v.clone()));
        }
        Ok(ckpt)
    }

    /// Restores model, optimizer state and step counter.
    pub fn resume(ckpt: &Checkpoint) -> Result<Self> {
        let (model, train) = UniScaleModel::from_checkpoint(ckpt)?;
        let train: TrainState = serde_json::from_value(
            train.ok_or_else(|| Error::Format("checkpoint carries no training state".into()))?,
        )
        .map_err(|e| Error::Format(format!("training state: {e}")))?;
        let mut state = AdamWState::new(model.params());
        for (i, p) in model.params().iter().enumerate() {
            for (prefix, slot) in [("adam_m", &mut state.m[i]), ("adam_v", &mut state.v[i])] {
                let name = format!("{prefix}/{}", p.name);
                let t = ckpt
                    .get(&name)
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
                if t.shape() != p.value.shape() {
                    return Err(Error::Format(format!("{name} has shape {:?}", t.shape())));
                }
                *slot = t.clone();
            }
        }
        state.step = train.adam_step;
        state.rejected = train.rejected;
        let mut trainer = Trainer::new(model, train.config)?;
        trainer.state = state;
        trainer.step = train.step;
        trainer.skipped = train.skipped;
        Ok(trainer)
    }
}
