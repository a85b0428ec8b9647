use std::path::PathBuf;

use uniscale_core::synth::{make_dataset, scene_family, SceneSpec};

use crate::config::{command_config, write_effective};
use crate::error::{CliError, CliResult, Context};

command_config! {
    SynthConfig, SynthArgs {
        /// Output directory for scene files and manifest.json.
        out: PathBuf = PathBuf::from("data");
        /// Number of scenes to generate.
        scenes: usize = 24;
        /// Views per scene.
        frames: usize = 4;
        /// Width and height of the square images.
        image_size: usize = 64;
        seed: u64 = 0;
        /// Probability that a scene is stored without metric scale.
        non_metric_fraction: f64 = 0.0;
        /// Fraction of scenes assigned to the train split.
        train_fraction: f64 = 0.8;
        fov_min_deg: f64 = SceneSpec::default().fov_deg[0];
        fov_max_deg: f64 = SceneSpec::default().fov_deg[1];
        boxes: usize = SceneSpec::default().boxes;
        spheres: usize = SceneSpec::default().spheres;
        /// Camera distance range, metres.
        radius_min: f64 = SceneSpec::default().radius[0];
        radius_max: f64 = SceneSpec::default().radius[1];
        elevation_min_deg: f64 = SceneSpec::default().elevation_deg[0];
        elevation_max_deg: f64 = SceneSpec::default().elevation_deg[1];
        azimuth_spread_deg: f64 = SceneSpec::default().azimuth_spread_deg;
        /// Ground checker cell size, metres.
        ground_tile: f64 = SceneSpec::default().ground_tile;
    }
}

impl SynthConfig {
    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            frames: self.frames,
            width: self.image_size,
            height: self.image_size,
            fov_deg: [self.fov_min_deg, self.fov_max_deg],
            boxes: self.boxes,
            spheres: self.spheres,
            radius: [self.radius_min, self.radius_max],
            elevation_deg: [self.elevation_min_deg, self.elevation_max_deg],
            azimuth_spread_deg: self.azimuth_spread_deg,
            ground_tile: self.ground_tile,
            ..SceneSpec::default()
        }
    }
}

pub fn run(cfg: &SynthConfig) -> CliResult<()> {
    if cfg.scenes == 0 {
        return Err(CliError::config("scenes must be at least 1"));
    }
    if !(0.0..=1.0).contains(&cfg.non_metric_fraction) || !(0.0..=1.0).contains(&cfg.train_fraction) {
        return Err(CliError::config("non_metric_fraction and train_fraction must lie in [0, 1]"));
    }
    let base = cfg.scene_spec();
    base.validate()?;
    let specs = scene_family(&base, cfg.scenes, cfg.non_metric_fraction, cfg.seed);
    let ds = make_dataset(&specs, [cfg.train_fraction, 1.0 - cfg.train_fraction], cfg.seed)?;
    ds.write(&cfg.out).context(cfg.out.display())?;
    write_effective(&cfg.out, "synth", cfg)?;
    let metric = ds.manifest.scenes.iter().filter(|e| e.metric).count();
    let train = ds.manifest.scenes.iter().filter(|e| e.split == uniscale_core::synth::Split::Train).count();
    println!(
        "wrote {} scenes ({} metric, {} train) to {}",
        ds.manifest.scenes.len(),
        metric,
        train,
        cfg.out.display()
    );
    Ok(())
}
