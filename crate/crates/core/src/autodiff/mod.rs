//! Dense-tensor reverse-mode automatic differentiation.

mod checkpoint;
mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod optim;
mod params;
mod suite;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use checkpoint::{put_u32, ByteReader};
pub use gradcheck::{finite_diff_check, finite_diff_check_params, relative_error, CoordinateError, GradCheckReport, GRAD_SCALE_FLOOR};
pub use graph::{Graph, OpKind, Var};
pub use optim::{
    adamw_step, global_grad_norm, AdamWConfig, AdamWState, GroupLr, LrPlan, StepOutcome, WarmupSchedule, FINETUNE_PEAK_BACKBONE,
    FINETUNE_PEAK_SCALE_AND_PRIORS, WARMUP_START_LR,
};
pub use params::{ParamGroup, ParamId, ParamStore, Parameter};
pub use suite::{op_suite, OpCheck, FD_STEP, OP_TOLERANCE, SUITE_OPS};
pub use tensor::Tensor;
