//! Scene-level evaluation in metric and median-aligned modes.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{absrel, depth_mask, inlier_ratio, median_align, INLIER_THRESHOLD};
use crate::error::{Error, Result};
use crate::model::UniScaleModel;
use crate::prior::PriorBundle;
use crate::synth::SceneSample;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Metric predictions against metric ground truth.
    Metric,
    /// Per-frame median alignment before comparison.
    #[default]
    #[serde(alias = "median-aligned")]
    Aligned,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Metric => "metric",
            EvalMode::Aligned => "aligned",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metric" => Ok(EvalMode::Metric),
            "aligned" | "median-aligned" => Ok(EvalMode::Aligned),
            _ => Err(Error::Config(format!("unknown eval mode {s:?}; expected metric or aligned"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub use_pose: bool,
    pub use_intrinsics: bool,
    pub threshold: f64,
    /// Evaluate only the first `views` frames of each scene.
    pub views: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: EvalMode::Aligned,
            use_pose: false,
            use_intrinsics: false,
            threshold: INLIER_THRESHOLD,
            views: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 1.0) {
            return Err(Error::Config(format!("inlier threshold must exceed 1, got {}", self.threshold)));
        }
        if self.views == Some(0) {
            return Err(Error::Config("views must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_priors(&self, use_pose: bool, use_intrinsics: bool) -> Self {
        Self {
            use_pose,
            use_intrinsics,
            ..self.clone()
        }
    }
}

/// The four prior rows of the sweep as `(use_pose, use_intrinsics)`:
/// image only, intrinsics, poses, both.
pub const PRIOR_SWEEP: [(bool, bool); 4] = [(false, false), (false, true), (true, false), (true, true)];

pub fn priors_label(use_pose: bool, use_intrinsics: bool) -> &'static str {
    match (use_pose, use_intrinsics) {
        (false, false) => "none",
        (false, true) => "K",
        (true, false) => "P",
        (true, true) => "K+P",
    }
}

/// Metric depth for every frame plus the scale that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthEstimate {
    pub depth: Vec<Vec<f64>>,
    pub scale: f64,
}

pub trait DepthPredictor: Sync {
    fn estimate(&self, scene: &SceneSample, priors: &PriorBundle) -> Result<DepthEstimate>;
}

impl DepthPredictor for UniScaleModel {
    fn estimate(&self, scene: &SceneSample, priors: &PriorBundle) -> Result<DepthEstimate> {
        let s = self.config().image_size;
        if scene.width != s || scene.height != s {
            return Err(Error::InvalidInput(format!(
                "scene is {}x{} but the model expects {s}x{s}",
                scene.width, scene.height
            )));
        }
        let pred = self.predict(&scene.images_tensor()?, priors)?;
        let metric = pred.metricize(pred.scale)?;
        Ok(DepthEstimate {
            depth: (0..metric.frames()).map(|i| metric.frame_depth(i).to_vec()).collect(),
            scale: pred.scale,
        })
    }
}

/// Returns the ground truth itself; its scale is the scene's scale target.
#[derive(Clone, Copy, Debug, Default)]
pub struct GroundTruth;

impl DepthPredictor for GroundTruth {
    fn estimate(&self, scene: &SceneSample, _: &PriorBundle) -> Result<DepthEstimate> {
        Ok(DepthEstimate {
            depth: scene.depth_frames(),
            scale: scene.scale.unwrap_or(1.0),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene: String,
    pub frames: usize,
    /// Mean over frames of AbsRel ×100.
    pub rel: f64,
    /// Mean over frames of the inlier percentage.
    pub tau: f64,
    pub s_pred: f64,
    pub s_gt: Option<f64>,
}

impl SceneReport {
    pub fn scale_ratio(&self) -> Option<f64> {
        self.s_gt.map(|s| self.s_pred / s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Largest `|ln(S_pred / S_gt)|`.
    pub max_abs_log: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub use_pose: bool,
    pub use_intrinsics: bool,
    pub threshold: f64,
    pub views: Option<usize>,
    pub rel: f64,
    pub tau: f64,
    pub scale_ratio: Option<ScaleStats>,
    pub scenes: Vec<SceneReport>,
}

impl EvalReport {
    pub fn priors(&self) -> &'static str {
        priors_label(self.use_pose, self.use_intrinsics)
    }
}

fn evaluate_scene<P: DepthPredictor + ?Sized>(
    predictor: &P,
    name: &str,
    scene: &SceneSample,
    cfg: &EvalConfig,
) -> Result<SceneReport> {
    if cfg.mode == EvalMode::Metric && !scene.metric {
        return Err(Error::InvalidInput(format!("{name}: metric evaluation of a non-metric scene")));
    }
    let subset;
    let scene = match cfg.views {
        Some(v) if v < scene.frames() => {
            subset = scene.select_frames(&(0..v).collect::<Vec<_>>())?;
            &subset
        }
        _ => scene,
    };
    let priors = PriorBundle::new(Some(scene.poses.clone()), Some(scene.intrinsics_list()))?
        .filtered(cfg.use_pose, cfg.use_intrinsics);
    let est = predictor.estimate(scene, &priors)?;
    if est.depth.len() != scene.frames() {
        return Err(Error::InvalidInput(format!(
            "{name}: predictor returned {} frames for {}",
            est.depth.len(),
            scene.frames()
        )));
    }
    let (mut rel, mut tau) = (0.0, 0.0);
    for (i, pred) in est.depth.iter().enumerate() {
        let gt = scene.frame_depth(i);
        let mask = depth_mask(&gt);
        let aligned;
        let p = match cfg.mode {
            EvalMode::Metric => pred,
            EvalMode::Aligned => {
                aligned = median_align(pred, &gt, &mask)?;
                &aligned
            }
        };
        rel += absrel(p, &gt, &mask).map_err(|e| Error::InvalidInput(format!("{name} frame {i}: {e}")))?;
        tau += inlier_ratio(p, &gt, &mask, cfg.threshold)?;
    }
    let n = est.depth.len() as f64;
    let s_gt = match (scene.metric, scene.scale) {
        (false, _) => None,
        (true, Some(s)) => Some(s),
        (true, None) => Some(scene.scale_target()?.s_gt),
    };
    Ok(SceneReport {
        scene: name.to_string(),
        frames: scene.frames(),
        rel: rel / n,
        tau: tau / n,
        s_pred: est.scale,
        s_gt,
    })
}

/// Evaluates every scene (concurrently) and averages over scenes; the
/// per-scene rows are ordered by scene name.
pub fn evaluate<P: DepthPredictor + ?Sized>(
    predictor: &P,
    scenes: &[(String, SceneSample)],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::InvalidInput("no scenes to evaluate".into()));
    }
    let mut rows: Vec<SceneReport> = scenes
        .par_iter()
        .map(|(name, s)| evaluate_scene(predictor, name, s, cfg))
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| a.scene.cmp(&b.scene));
    let n = rows.len() as f64;
    let ratios: Vec<f64> = rows.iter().filter_map(SceneReport::scale_ratio).collect();
    let scale_ratio = (!ratios.is_empty()).then(|| ScaleStats {
        mean: ratios.iter().sum::<f64>() / ratios.len() as f64,
        min: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        max: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        max_abs_log: ratios.iter().map(|r| r.ln().abs()).fold(0.0, f64::max),
    });
    Ok(EvalReport {
        mode: cfg.mode,
        use_pose: cfg.use_pose,
        use_intrinsics: cfg.use_intrinsics,
        threshold: cfg.threshold,
        views: cfg.views,
        rel: rows.iter().map(|r| r.rel).sum::<f64>() / n,
        tau: rows.iter().map(|r| r.tau).sum::<f64>() / n,
        scale_ratio,
        scenes: rows,
    })
}

/// One report per prior configuration of [`PRIOR_SWEEP`].
pub fn sweep_priors<P: DepthPredictor + ?Sized>(
    predictor: &P,
    scenes: &[(String, SceneSample)],
    base: &EvalConfig,
) -> Result<Vec<EvalReport>> {
    PRIOR_SWEEP
        .iter()
        .map(|&(p, k)| evaluate(predictor, scenes, &base.with_priors(p, k)))
        .collect()
}

/// Aligned plain-text table, one row per report.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:<6} {:>5} {:>9} {:>8} {:>11} {:>11}",
        "mode", "priors", "views", "rel", "tau", "S ratio", "max|lnS|"
    );
    for r in reports {
        let views = r.views.map_or("all".to_string(), |v| v.to_string());
        let (ratio, log) = match r.scale_ratio {
            Some(s) => (format!("{:.4}", s.mean), format!("{:.4}", s.max_abs_log)),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(
            out,
            "{:<8} {:<6} {:>5} {:>9.3} {:>8.2} {:>11} {:>11}",
            r.mode.to_string(),
            r.priors(),
            views,
            r.rel,
            r.tau,
            ratio,
            log
        );
    }
    out
}

/// Per-scene rows of every report as CSV.
pub fn to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("mode,priors,views,threshold,scene,frames,rel,tau,s_pred,s_gt\n");
    for r in reports {
        for s in &r.scenes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.mode,
                r.priors(),
                r.views.map_or(String::new(), |v| v.to_string()),
                r.threshold,
                s.scene,
                s.frames,
                s.rel,
                s.tau,
                s.s_pred,
                s.s_gt.map_or(String::new(), |v| v.to_string())
            );
        }
    }
    out
}
