//! Scale targets, losses and training.

mod check;
mod losses;
mod target;
mod train;

pub use check::{model_gradcheck, MODEL_TOLERANCE};
pub use losses::{loss_camera, loss_depth, loss_pmap, loss_scale, LossReport, CONF_ALPHA, HUBER_DELTA};
pub use target::{compute_scale_target, median, ScaleTarget, DEPTH_CAP_FACTOR};
pub use train::{
    plan_step, scene_loss, train_step, StepLog, StepPlan, StepResult, StepStatus, TrainConfig, TrainState, Trainer,
    TrainingScene,
};
