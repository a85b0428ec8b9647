//! Depth metrics, evaluation reports, prior sweeps and the ablation harness.

mod ablation;
mod evaluate;
mod metrics;
mod plot;

pub use ablation::{
    ablation_run, train_variant, variant_configs, view_curve, AblationConfig, AblationReport, CurvePoint, VariantRun,
};
pub use evaluate::{
    evaluate, format_table, priors_label, sweep_priors, to_csv, DepthEstimate, DepthPredictor, EvalConfig, EvalMode,
    EvalReport, GroundTruth, ScaleStats, SceneReport, PRIOR_SWEEP,
};
pub use metrics::{absrel, depth_mask, inlier_ratio, median_align, INLIER_THRESHOLD};
pub use plot::{depth_svg, line_chart_svg, Series};
