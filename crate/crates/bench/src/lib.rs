//! Fixtures shared by the benchmarks.

use uniscale_core::model::{ModelConfig, UniScaleModel};
use uniscale_core::supervision::TrainingScene;
use uniscale_core::synth::{generate_scene, SceneSpec};

/// A metric scene rendered at the model's input size.
pub fn scene(config: &ModelConfig, frames: usize, seed: u64) -> TrainingScene {
    let sample = generate_scene(&SceneSpec {
        seed,
        frames,
        width: config.image_size,
        height: config.image_size,
        ..SceneSpec::default()
    })
    .expect("default scene spec renders");
    TrainingScene::new(sample).expect("metric scene has a scale target")
}

pub fn model(config: ModelConfig) -> UniScaleModel {
    UniScaleModel::new(config).expect("valid model config")
}
