use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use uniscale_core::autodiff::{AdamWConfig, LrPlan};
use uniscale_core::model::{ModelConfig, UniScaleModel, Variant};
use uniscale_core::prior::PriorProbabilities;
use uniscale_core::supervision::{TrainConfig, Trainer};
use uniscale_core::synth::Split;

use super::{load_named, read_checkpoint, training_scenes};
use crate::config::{command_config, write_effective};
use crate::error::{CliError, CliResult, Context};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const LATEST_CHECKPOINT: &str = "checkpoint.usck";

command_config! {
    TrainCmdConfig, TrainArgs {
        /// Dataset directory or manifest file.
        data: PathBuf = PathBuf::from("data");
        /// Output directory for checkpoints and the step log.
        out: PathBuf = PathBuf::from("run");
        /// Checkpoint to resume from; its model and training settings are
        /// used and training continues until `steps`.
        resume: Option<PathBuf> = None;
        /// Total optimizer steps (desk-scale default).
        steps: u64 = 2000;
        /// Seed of scene order, prior sampling and frame subsets.
        seed: u64 = 0;
        /// Seed of the parameter initialisation.
        model_seed: u64 = 0;
        image_size: usize = ModelConfig::default().image_size;
        patch_size: usize = ModelConfig::default().patch_size;
        embed_dim: usize = ModelConfig::default().embed_dim;
        aggregator_blocks: usize = ModelConfig::default().aggregator_blocks;
        attention_heads: usize = ModelConfig::default().attention_heads;
        register_count: usize = ModelConfig::default().register_count;
        mlp_ratio: usize = ModelConfig::default().mlp_ratio;
        dense_channels: Vec<usize> = ModelConfig::default().dense_channels.to_vec() => [value_delimiter = ','];
        variant: Variant = Variant::Full;
        warmup_steps: u64 = LrPlan::default().warmup_steps;
        lr_start: f64 = LrPlan::default().start_lr;
        /// Peak rate of the scale head and prior encoders.
        lr_scale_and_priors: f64 = LrPlan::default().peak_scale_and_priors;
        /// Peak rate of every other parameter.
        lr_backbone: f64 = LrPlan::default().peak_backbone;
        /// Rate at the last step as a fraction of the peak (cosine decay).
        lr_final_fraction: f64 = LrPlan::default().final_fraction;
        beta1: f64 = AdamWConfig::default().beta1;
        beta2: f64 = AdamWConfig::default().beta2;
        eps: f64 = AdamWConfig::default().eps;
        weight_decay: f64 = AdamWConfig::default().weight_decay;
        clip_norm: f64 = AdamWConfig::default().clip_norm;
        /// Probability of injecting any prior in a step.
        p_inject: f64 = PriorProbabilities::default().inject;
        p_pose: f64 = PriorProbabilities::default().pose;
        p_intrinsics: f64 = PriorProbabilities::default().intrinsics;
        p_scale_supervision: f64 = PriorProbabilities::default().scale_supervision;
        /// Fewest frames drawn per step (0 with max_frames 0 uses all).
        min_frames: usize = 0;
        max_frames: usize = 0;
        /// Steps between checkpoints.
        checkpoint_every: u64 = 500;
    }
}

impl TrainCmdConfig {
    pub fn model_config(&self) -> CliResult<ModelConfig> {
        let dense: [usize; 2] = self
            .dense_channels
            .as_slice()
            .try_into()
            .map_err(|_| CliError::config("dense_channels needs exactly two values"))?;
        let m = ModelConfig {
            image_size: self.image_size,
            patch_size: self.patch_size,
            embed_dim: self.embed_dim,
            aggregator_blocks: self.aggregator_blocks,
            attention_heads: self.attention_heads,
            register_count: self.register_count,
            mlp_ratio: self.mlp_ratio,
            dense_channels: dense,
            seed: self.model_seed,
            variant: self.variant,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let frames = match (self.min_frames, self.max_frames) {
            (0, 0) => None,
            (lo, hi) => Some([lo.max(1), hi.max(lo)]),
        };
        let t = TrainConfig {
            steps: self.steps,
            seed: self.seed,
            lr: LrPlan {
                start_lr: self.lr_start,
                peak_scale_and_priors: self.lr_scale_and_priors,
                peak_backbone: self.lr_backbone,
                warmup_steps: self.warmup_steps,
                final_fraction: self.lr_final_fraction,
            },
            optimizer: AdamWConfig {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                weight_decay: self.weight_decay,
                clip_norm: self.clip_norm,
            },
            priors: PriorProbabilities {
                inject: self.p_inject,
                pose: self.p_pose,
                intrinsics: self.p_intrinsics,
                scale_supervision: self.p_scale_supervision,
            },
            frames,
            checkpoint_every: self.checkpoint_every,
        };
        t.validate()?;
        Ok(t)
    }
}

fn save(trainer: &Trainer, out: &Path) -> CliResult<()> {
    let ckpt = trainer.checkpoint()?;
    let numbered = out.join(format!("checkpoint_{:06}.usck", trainer.step));
    ckpt.save(&numbered).context(numbered.display())?;
    ckpt.save(out.join(LATEST_CHECKPOINT)).context(out.display())?;
    Ok(())
}

pub fn run(cfg: &TrainCmdConfig) -> CliResult<()> {
    let mut trainer = match &cfg.resume {
        Some(path) => Trainer::resume(&read_checkpoint(path)?).context(format!("resume from {}", path.display()))?,
        None => Trainer::new(UniScaleModel::new(cfg.model_config()?)?, cfg.train_config()?)?,
    };
    let scenes = training_scenes(load_named(&cfg.data, Split::Train)?)?;
    let size = trainer.model.config().image_size;
    if let Some(s) = scenes.iter().find(|s| s.sample.width != size || s.sample.height != size) {
        return Err(CliError::data(format!(
            "scenes are {}x{} but the model expects {size}x{size}",
            s.sample.width, s.sample.height
        )));
    }
    write_effective(&cfg.out, "train", cfg)?;
    let log_path = cfg.out.join(LOG_FILE);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(cfg.resume.is_some())
        .truncate(cfg.resume.is_none())
        .open(&log_path)
        .context(log_path.display())?;
    let mut log = BufWriter::new(file);
    let start = trainer.step;
    let out = cfg.out.clone();
    trainer.run(&scenes, cfg.steps, Some(&mut log as &mut dyn Write), |t| {
        save(t, &out).map_err(|e| uniscale_core::Error::Io(std::io::Error::other(e.message)))
    })?;
    log.flush().context(log_path.display())?;
    if trainer.config.checkpoint_every == 0 || trainer.step % trainer.config.checkpoint_every != 0 {
        save(&trainer, &cfg.out)?;
    }
    let st = trainer.train_state();
    println!(
        "trained steps {start}..{} ({} applied, {} rejected, {} skipped); checkpoint {}",
        trainer.step,
        st.adam_step,
        st.rejected,
        st.skipped,
        cfg.out.join(LATEST_CHECKPOINT).display()
    );
    if st.adam_step == 0 && trainer.step > start {
        return Err(CliError::numeric("no optimizer step was applied"));
    }
    Ok(())
}
