use uniscale_core::error::Result;
use uniscale_core::eval::{evaluate, DepthEstimate, DepthPredictor, EvalConfig, EvalMode, GroundTruth};
use uniscale_core::prior::PriorBundle;
use uniscale_core::synth::{generate_scene, SceneSample, SceneSpec};

fn scenes() -> Vec<(String, SceneSample)> {
    (0..4)
        .map(|i| {
            let s = generate_scene(&SceneSpec {
                seed: 40 + i,
                frames: 3,
                width: 24,
                height: 24,
                ..SceneSpec::default()
            })
            .unwrap();
            (format!("scene_{i}"), s)
        })
        .collect()
}

/// Ground truth with a deterministic per-pixel ripple, times `k`.
struct Rippled {
    k: f64,
}

impl DepthPredictor for Rippled {
    fn estimate(&self, scene: &SceneSample, _: &PriorBundle) -> Result<DepthEstimate> {
        let depth = scene
            .depth_frames()
            .into_iter()
            .map(|d| {
                d.iter()
                    .enumerate()
                    .map(|(i, v)| v * self.k * (1.0 + 0.2 * ((i as f64) * 0.7).sin()))
                    .collect()
            })
            .collect();
        Ok(DepthEstimate { depth, scale: self.k })
    }
}

#[test]
fn aligned_rel_ignores_global_scaling() {
    let s = scenes();
    let cfg = EvalConfig::default();
    let base = evaluate(&Rippled { k: 1.0 }, &s, &cfg).unwrap();
    assert!(base.rel > 1.0);
    for k in [1e-3, 0.37, 2.0, 1e4] {
        let r = evaluate(&Rippled { k }, &s, &cfg).unwrap();
        assert!((r.rel - base.rel).abs() <= 1e-12 * base.rel.max(1.0), "k = {k}: {} vs {}", r.rel, base.rel);
        assert_eq!(r.tau, base.tau);
    }
}

#[test]
fn ground_truth_is_perfect_in_both_modes() {
    let s = scenes();
    for mode in [EvalMode::Metric, EvalMode::Aligned] {
        let r = evaluate(
            &GroundTruth,
            &s,
            &EvalConfig {
                mode,
                ..EvalConfig::default()
            },
        )
        .unwrap();
        assert_eq!(r.rel, 0.0, "{mode}");
        assert_eq!(r.tau, 100.0, "{mode}");
    }
}

#[test]
fn metric_mode_refuses_non_metric_scenes() {
    let mut s = scenes();
    s[0].1.metric = false;
    s[0].1.scale = None;
    let cfg = EvalConfig {
        mode: EvalMode::Metric,
        ..EvalConfig::default()
    };
    assert!(evaluate(&GroundTruth, &s, &cfg).is_err());
}
