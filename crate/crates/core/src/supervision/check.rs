//! Finite-difference check of the full training loss of the micro model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::train::{scene_loss, TrainingScene};
use crate::autodiff::{finite_diff_check_params, GradCheckReport, FD_STEP};
use crate::error::Result;
use crate::model::{ModelConfig, UniScaleModel};
use crate::prior::PriorConfig;
use crate::synth::{generate_scene, SceneSpec};

pub const MODEL_TOLERANCE: f64 = 1e-4;

/// Two 16×16 frames through the micro model with both priors injected and
/// scale supervised; `coords` parameter coordinates are drawn uniformly.
pub fn model_gradcheck(seed: u64, coords: usize, tolerance: f64) -> Result<GradCheckReport> {
    let cfg = ModelConfig {
        seed,
        ..ModelConfig::micro()
    };
    let model = UniScaleModel::new(cfg)?;
    let sample = generate_scene(&SceneSpec {
        seed,
        frames: 2,
        width: 16,
        height: 16,
        ..SceneSpec::default()
    })?;
    let scene = TrainingScene::new(sample)?;
    let priors = PriorConfig {
        inject_any: true,
        use_pose: true,
        use_intrinsics: true,
        supervise_scale: true,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = model.params();
    let total = store.total_numel();
    let picks: Vec<_> = (0..coords)
        .map(|_| {
            let mut k = rng.random_range(0..total);
            store
                .iter()
                .zip(store.ids())
                .find_map(|(p, id)| {
                    let n = p.value.numel();
                    if k < n {
                        Some((id, k))
                    } else {
                        k -= n;
                        None
                    }
                })
                .expect("index below total")
        })
        .collect();
    finite_diff_check_params(
        |g, store| {
            let mut m = model.clone();
            *m.params_mut() = store.clone();
            Ok(scene_loss(&m, g, &scene, &priors)?.0)
        },
        store,
        &picks,
        FD_STEP,
        tolerance,
    )
}
