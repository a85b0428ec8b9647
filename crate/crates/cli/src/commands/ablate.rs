use std::path::PathBuf;

use uniscale_core::autodiff::LrPlan;
use uniscale_core::eval::{ablation_run, AblationConfig, EvalMode, INLIER_THRESHOLD};
use uniscale_core::model::{ModelConfig, Variant};
use uniscale_core::prior::PriorProbabilities;
use uniscale_core::supervision::TrainConfig;
use uniscale_core::synth::Split;

use super::eval::{CurveFile, CURVE_FILE};
use super::{load_named, parse_split, training_scenes, write_text};
use crate::config::{command_config, write_effective};
use crate::error::{CliError, CliResult};

command_config! {
    AblateCmdConfig, AblateArgs {
        /// Dataset directory or manifest file; trains on the train split.
        data: PathBuf = PathBuf::from("data");
        /// Output directory for tables, curves and SVG plots.
        out: PathBuf = PathBuf::from("ablation");
        /// Variants compared against full.
        variants: Vec<Variant> = AblationConfig::default().variants => [value_delimiter = ','];
        /// Training steps per variant.
        steps: u64 = AblationConfig::default().train.steps;
        seed: u64 = 0;
        model_seed: u64 = 0;
        image_size: usize = ModelConfig::default().image_size;
        patch_size: usize = ModelConfig::default().patch_size;
        embed_dim: usize = ModelConfig::default().embed_dim;
        aggregator_blocks: usize = ModelConfig::default().aggregator_blocks;
        attention_heads: usize = ModelConfig::default().attention_heads;
        warmup_steps: u64 = LrPlan::default().warmup_steps;
        lr_scale_and_priors: f64 = LrPlan::default().peak_scale_and_priors;
        lr_backbone: f64 = LrPlan::default().peak_backbone;
        lr_final_fraction: f64 = LrPlan::default().final_fraction;
        p_inject: f64 = PriorProbabilities::default().inject;
        /// Fewest frames drawn per training step (0 with max_frames 0 uses all).
        min_frames: usize = 0;
        max_frames: usize = 0;
        /// Split used for evaluation.
        split: String = "val".into();
        mode: EvalMode = EvalMode::Aligned;
        threshold: f64 = INLIER_THRESHOLD;
        /// View counts of the rel/tau curves.
        views: Vec<usize> = AblationConfig::default().views => [value_delimiter = ','];
    }
}

impl AblateCmdConfig {
    pub fn ablation_config(&self) -> CliResult<AblationConfig> {
        let model = ModelConfig {
            image_size: self.image_size,
            patch_size: self.patch_size,
            embed_dim: self.embed_dim,
            aggregator_blocks: self.aggregator_blocks,
            attention_heads: self.attention_heads,
            seed: self.model_seed,
            ..ModelConfig::default()
        };
        model.validate()?;
        let frames = match (self.min_frames, self.max_frames) {
            (0, 0) => None,
            (lo, hi) => Some([lo.max(1), hi.max(lo)]),
        };
        let train = TrainConfig {
            steps: self.steps,
            seed: self.seed,
            lr: LrPlan {
                peak_scale_and_priors: self.lr_scale_and_priors,
                peak_backbone: self.lr_backbone,
                warmup_steps: self.warmup_steps,
                final_fraction: self.lr_final_fraction,
                ..LrPlan::default()
            },
            priors: PriorProbabilities {
                inject: self.p_inject,
                ..PriorProbabilities::default()
            },
            frames,
            checkpoint_every: 0,
            ..TrainConfig::default()
        };
        train.validate()?;
        if self.views.is_empty() || self.views.contains(&0) {
            return Err(CliError::config("views must list positive view counts"));
        }
        Ok(AblationConfig {
            variants: self.variants.clone(),
            model,
            train,
            mode: self.mode,
            threshold: self.threshold,
            views: self.views.clone(),
        })
    }
}

pub fn run(cfg: &AblateCmdConfig) -> CliResult<()> {
    let acfg = cfg.ablation_config()?;
    let train = training_scenes(load_named(&cfg.data, Split::Train)?)?;
    let eval = load_named(&cfg.data, parse_split(&cfg.split)?)?;
    let report = ablation_run(&acfg, &train, &eval)?;
    write_effective(&cfg.out, "ablate", cfg)?;
    let table = report.table();
    write_text(&cfg.out.join("ablation.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write_text(&cfg.out.join("ablation.txt"), &table)?;
    let (rel, tau) = report.curve_series();
    let curves = CurveFile {
        mode: report.mode,
        rel,
        tau,
    };
    write_text(&cfg.out.join(CURVE_FILE), &(serde_json::to_string_pretty(&curves)? + "\n"))?;
    super::plot::render(&curves, &cfg.out)?;
    print!("{table}");
    Ok(())
}
