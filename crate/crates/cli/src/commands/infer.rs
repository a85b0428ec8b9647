use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use serde::Serialize;
use uniscale_core::autodiff::Tensor;
use uniscale_core::eval::depth_svg;
use uniscale_core::geometry::{intrinsics_from_fov, CameraParam, Intrinsics, Pose};
use uniscale_core::model::UniScaleModel;
use uniscale_core::prior::PriorBundle;
use uniscale_core::synth::{read_scene, write_scene, SceneSample};

use super::{read_checkpoint, write_text};
use crate::config::{command_config, write_effective};
use crate::error::{CliError, CliResult, Context};

command_config! {
    InferConfig, InferArgs {
        checkpoint: PathBuf = PathBuf::from("run/checkpoint.usck");
        /// Scene file whose images (and optionally cameras) are used as input.
        scene: Option<PathBuf> = None;
        /// Image files, one per frame, used when no scene is given.
        images: Vec<PathBuf> = Vec::new() => [value_delimiter = ','];
        /// Horizontal field of view in degrees for image input; enables the intrinsics prior.
        fov_deg: Option<f64> = None;
        /// Inject the scene's poses (metric) as the pose prior.
        use_pose: bool = false => [action = clap::ArgAction::Set];
        /// Inject the scene's intrinsics as the intrinsics prior.
        use_intrinsics: bool = false => [action = clap::ArgAction::Set];
        out: PathBuf = PathBuf::from("infer");
    }
}

#[derive(Serialize)]
struct PredictionSummary {
    frames: usize,
    scale: f64,
    use_pose: bool,
    use_intrinsics: bool,
    cameras: Vec<CameraParam>,
    depth_min: f64,
    depth_max: f64,
}

struct Input {
    images: Tensor,
    poses: Option<Vec<Pose>>,
    intrinsics: Option<Intrinsics>,
}

fn load_image(path: &Path, size: usize) -> CliResult<Vec<f64>> {
    let img = image::open(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
        .resize_exact(size as u32, size as u32, FilterType::Triangle)
        .to_rgb8();
    let hw = size * size;
    let mut planar = vec![0.0; 3 * hw];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            planar[c * hw + i] = p.0[c] as f64 / 255.0;
        }
    }
    Ok(planar)
}

fn input(cfg: &InferConfig, size: usize) -> CliResult<Input> {
    if let Some(path) = &cfg.scene {
        let s = read_scene(path).context(path.display())?;
        if s.width != size || s.height != size {
            return Err(CliError::data(format!(
                "scene is {}x{} but the model takes {size}x{size} images",
                s.width, s.height
            )));
        }
        return Ok(Input {
            images: s.images_tensor()?,
            poses: cfg.use_pose.then(|| s.poses.clone()),
            intrinsics: cfg.use_intrinsics.then_some(s.intrinsics),
        });
    }
    if cfg.images.is_empty() {
        return Err(CliError::config("infer needs a scene or at least one image"));
    }
    if cfg.use_pose {
        return Err(CliError::config("pose priors need a scene file"));
    }
    let mut data = Vec::with_capacity(cfg.images.len() * 3 * size * size);
    for p in &cfg.images {
        data.extend(load_image(p, size)?);
    }
    let intrinsics = match cfg.fov_deg {
        Some(f) => {
            let r = f.to_radians();
            Some(intrinsics_from_fov([r, r], size, size)?)
        }
        None if cfg.use_intrinsics => return Err(CliError::config("use_intrinsics with images needs fov_deg")),
        None => None,
    };
    Ok(Input {
        images: Tensor::new([cfg.images.len(), 3, size, size], data)?,
        poses: None,
        intrinsics,
    })
}

pub fn run(cfg: &InferConfig) -> CliResult<()> {
    let (model, _) = UniScaleModel::from_checkpoint(&read_checkpoint(&cfg.checkpoint)?)?;
    let size = model.config().image_size;
    let inp = input(cfg, size)?;
    let n = inp.images.shape()[0];
    let priors = PriorBundle::new(inp.poses, inp.intrinsics.map(|k| vec![k; n]))?;
    let pred = model.predict(&inp.images, &priors)?;
    let pred = pred.metricize(pred.scale)?;

    let poses = pred.cameras.iter().map(|c| c.pose()).collect::<Result<Vec<_>, _>>()?;
    let intrinsics = match inp.intrinsics {
        Some(k) => k,
        None => intrinsics_from_fov(pred.cameras[0].fov, size, size)?,
    };
    let sample = SceneSample {
        width: size,
        height: size,
        images: inp.images.data().iter().map(|&v| v as f32).collect(),
        depths: pred.depth.data().iter().map(|&d| d as f32).collect(),
        intrinsics,
        poses,
        metric: true,
        scale: Some(pred.scale),
    };
    std::fs::create_dir_all(&cfg.out).context(cfg.out.display())?;
    write_scene(&sample, cfg.out.join("prediction.uscn")).context("prediction.uscn")?;
    for i in 0..n {
        write_text(&cfg.out.join(format!("depth_{i}.svg")), &depth_svg(pred.frame_depth(i), size, size))?;
    }
    let d = pred.depth.data();
    let summary = PredictionSummary {
        frames: n,
        scale: pred.scale,
        use_pose: priors.has_pose(),
        use_intrinsics: priors.has_intrinsics(),
        cameras: pred.cameras.clone(),
        depth_min: d.iter().copied().fold(f64::INFINITY, f64::min),
        depth_max: d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    write_text(&cfg.out.join("prediction.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    write_effective(&cfg.out, "infer", cfg)?;
    println!("{n} frames, scale {:.4}, wrote {}", pred.scale, cfg.out.display());
    Ok(())
}
