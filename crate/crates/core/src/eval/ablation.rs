//! Trains model variants under identical seeds and compares them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, sweep_priors, EvalConfig, EvalMode, EvalReport};
use super::metrics::INLIER_THRESHOLD;
use super::plot::{line_chart_svg, Series};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, UniScaleModel, Variant};
use crate::supervision::{StepLog, TrainConfig, Trainer, TrainingScene};
use crate::synth::SceneSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Variants compared against `full`, which always runs first.
    pub variants: Vec<Variant>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mode: EvalMode,
    pub threshold: f64,
    /// View counts of the rel/τ curves.
    pub views: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.iter().copied().filter(|v| *v != Variant::Full).collect(),
            model: ModelConfig::default(),
            train: TrainConfig {
                steps: 300,
                ..TrainConfig::default()
            },
            mode: EvalMode::Aligned,
            threshold: INLIER_THRESHOLD,
            views: vec![1, 2, 3, 4],
        }
    }
}

impl AblationConfig {
    /// `full` followed by the requested variants, without duplicates.
    pub fn run_order(&self) -> Vec<Variant> {
        let mut out = vec![Variant::Full];
        for v in &self.variants {
            if !out.contains(v) {
                out.push(*v);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub views: usize,
    pub rel: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRun {
    pub variant: Variant,
    /// Mean total loss over the last tenth of training.
    pub final_loss: f64,
    /// One report per prior configuration.
    pub reports: Vec<EvalReport>,
    /// Evaluated with intrinsics and pose priors.
    pub curve: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub mode: EvalMode,
    pub seed: u64,
    pub steps: u64,
    pub runs: Vec<VariantRun>,
}

/// Model and training configuration used for `variant`.
pub fn variant_configs(variant: Variant, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
    let mut train = train.clone();
    if !variant.uses_priors() {
        train.priors.inject = 0.0;
    }
    (ModelConfig { variant, ..model.clone() }, train)
}

pub fn train_variant(
    variant: Variant,
    model: &ModelConfig,
    train: &TrainConfig,
    scenes: &[TrainingScene],
) -> Result<(UniScaleModel, Vec<StepLog>)> {
    let (mcfg, tcfg) = variant_configs(variant, model, train);
    let mut trainer = Trainer::new(UniScaleModel::new(mcfg)?, tcfg)?;
    let mut logs = Vec::with_capacity(train.steps as usize);
    while trainer.step < train.steps {
        logs.push(trainer.step(scenes)?);
    }
    Ok((trainer.model, logs))
}

fn tail_mean(logs: &[StepLog]) -> f64 {
    let k = (logs.len() / 10).max(1).min(logs.len());
    if k == 0 {
        return f64::NAN;
    }
    logs[logs.len() - k..].iter().map(|l| l.loss.total).sum::<f64>() / k as f64
}

pub fn view_curve(
    model: &UniScaleModel,
    scenes: &[(String, SceneSample)],
    base: &EvalConfig,
    views: &[usize],
) -> Result<Vec<CurvePoint>> {
    views
        .iter()
        .map(|&v| {
            let cfg = EvalConfig {
                views: Some(v),
                ..base.with_priors(true, true)
            };
            let r = evaluate(model, scenes, &cfg)?;
            Ok(CurvePoint {
                views: v,
                rel: r.rel,
                tau: r.tau,
            })
        })
        .collect()
}

pub fn ablation_run(
    cfg: &AblationConfig,
    train_scenes: &[TrainingScene],
    eval_scenes: &[(String, SceneSample)],
) -> Result<AblationReport> {
    if train_scenes.is_empty() || eval_scenes.is_empty() {
        return Err(Error::InvalidInput("ablation needs training and evaluation scenes".into()));
    }
    let base = EvalConfig {
        mode: cfg.mode,
        threshold: cfg.threshold,
        ..EvalConfig::default()
    };
    base.validate()?;
    let mut runs = Vec::new();
    for variant in cfg.run_order() {
        let (model, logs) = train_variant(variant, &cfg.model, &cfg.train, train_scenes)?;
        runs.push(VariantRun {
            variant,
            final_loss: tail_mean(&logs),
            reports: sweep_priors(&model, eval_scenes, &base)?,
            curve: view_curve(&model, eval_scenes, &base, &cfg.views)?,
        });
    }
    Ok(AblationReport {
        mode: cfg.mode,
        seed: cfg.train.seed,
        steps: cfg.train.steps,
        runs,
    })
}

impl AblationReport {
    /// Rows of variant × prior configuration with the difference to `full`.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<26} {:<6} {:>9} {:>8} {:>9} {:>9} {:>10}",
            "variant", "priors", "rel", "tau", "d rel", "S ratio", "loss"
        );
        let full = self.runs.iter().find(|r| r.variant == Variant::Full);
        for run in &self.runs {
            for (i, r) in run.reports.iter().enumerate() {
                let delta = full
                    .and_then(|f| f.reports.get(i))
                    .map_or("-".to_string(), |f| format!("{:+.3}", r.rel - f.rel));
                let ratio = r.scale_ratio.map_or("-".to_string(), |s| format!("{:.4}", s.mean));
                let _ = writeln!(
                    out,
                    "{:<26} {:<6} {:>9.3} {:>8.2} {:>9} {:>9} {:>10.5}",
                    run.variant.name(),
                    r.priors(),
                    r.rel,
                    r.tau,
                    delta,
                    ratio,
                    run.final_loss
                );
            }
        }
        out
    }

    /// rel and τ against the number of views, one series per variant.
    pub fn curve_series(&self) -> (Vec<Series>, Vec<Series>) {
        let series = |f: fn(&CurvePoint) -> f64| -> Vec<Series> {
            self.runs
                .iter()
                .map(|r| Series {
                    label: r.variant.name().to_string(),
                    points: r.curve.iter().map(|p| (p.views as f64, f(p))).collect(),
                })
                .collect()
        };
        (series(|p| p.rel), series(|p| p.tau))
    }

    pub fn curves_svg(&self) -> (String, String) {
        let (rel, tau) = self.curve_series();
        (
            line_chart_svg(&format!("rel vs views ({})", self.mode), "views", "rel", &rel),
            line_chart_svg(&format!("tau vs views ({})", self.mode), "views", "tau (%)", &tau),
        )
    }
}
