use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use uniscale_core::eval::{
    evaluate, format_table, sweep_priors, to_csv, view_curve, DepthPredictor, EvalConfig, EvalMode, EvalReport,
    GroundTruth, Series, INLIER_THRESHOLD,
};
use uniscale_core::model::UniScaleModel;

use super::{load_named, parse_split, read_checkpoint, write_text};
use crate::config::{command_config, write_effective};
use crate::error::{CliError, CliResult, Context};

command_config! {
    EvalCmdConfig, EvalArgs {
        /// Dataset directory or manifest file.
        data: PathBuf = PathBuf::from("data");
        /// Checkpoint to evaluate.
        checkpoint: PathBuf = PathBuf::from("run/checkpoint.usck");
        /// Output directory for report.json, report.txt and report.csv.
        out: PathBuf = PathBuf::from("eval");
        /// Split to evaluate: train or val.
        split: String = "val".into();
        /// metric or aligned (per-frame median alignment).
        mode: EvalMode = EvalMode::Aligned;
        use_pose: bool = false => [action = clap::ArgAction::Set];
        use_intrinsics: bool = false => [action = clap::ArgAction::Set];
        /// Inlier threshold on max(pred/gt, gt/pred).
        threshold: f64 = INLIER_THRESHOLD;
        /// Evaluate only the first N views of each scene (0 = all).
        views: usize = 0;
        /// Emit the four prior rows (none, K, P, K+P) instead of one.
        sweep_priors: bool = false => [action = clap::ArgAction::Set];
        /// View counts for rel/tau curves with K+P priors (empty = none).
        curve_views: Vec<usize> = Vec::new() => [value_delimiter = ','];
        /// model, or ground-truth to score the ground truth itself.
        predictor: String = "model".into();
    }
}

/// Curves as written by `eval` and `ablate` and read by `plot`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveFile {
    pub mode: EvalMode,
    pub rel: Vec<Series>,
    pub tau: Vec<Series>,
}

pub const CURVE_FILE: &str = "curves.json";

pub fn run(cfg: &EvalCmdConfig) -> CliResult<()> {
    let base = EvalConfig {
        mode: cfg.mode,
        use_pose: cfg.use_pose,
        use_intrinsics: cfg.use_intrinsics,
        threshold: cfg.threshold,
        views: (cfg.views > 0).then_some(cfg.views),
    };
    base.validate()?;
    let split = parse_split(&cfg.split)?;
    let model = match cfg.predictor.as_str() {
        "model" => Some(UniScaleModel::from_checkpoint(&read_checkpoint(&cfg.checkpoint)?)?.0),
        "ground-truth" => None,
        other => return Err(CliError::config(format!("unknown predictor {other:?}; expected model or ground-truth"))),
    };
    let predictor: &dyn DepthPredictor = match &model {
        Some(m) => m,
        None => &GroundTruth,
    };
    let scenes = load_named(&cfg.data, split)?;
    let reports: Vec<EvalReport> = if cfg.sweep_priors {
        sweep_priors(predictor, &scenes, &base)?
    } else {
        vec![evaluate(predictor, &scenes, &base)?]
    };
    write_effective(&cfg.out, "eval", cfg)?;
    let table = format_table(&reports);
    write_text(&cfg.out.join("report.json"), &(serde_json::to_string_pretty(&reports)? + "\n"))?;
    write_text(&cfg.out.join("report.txt"), &table)?;
    write_text(&cfg.out.join("report.csv"), &to_csv(&reports))?;
    print!("{table}");
    if !cfg.curve_views.is_empty() {
        let m = model
            .as_ref()
            .ok_or_else(|| CliError::config("curve_views needs predictor = model"))?;
        let curve = view_curve(m, &scenes, &base, &cfg.curve_views)?;
        let label = cfg.checkpoint.display().to_string();
        let file = CurveFile {
            mode: cfg.mode,
            rel: vec![Series {
                label: label.clone(),
                points: curve.iter().map(|p| (p.views as f64, p.rel)).collect(),
            }],
            tau: vec![Series {
                label,
                points: curve.iter().map(|p| (p.views as f64, p.tau)).collect(),
            }],
        };
        write_text(&cfg.out.join(CURVE_FILE), &(serde_json::to_string_pretty(&file)? + "\n"))?;
        super::plot::render(&file, &cfg.out).context("curves")?;
    }
    Ok(())
}
