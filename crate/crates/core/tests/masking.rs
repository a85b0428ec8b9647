use uniscale_core::autodiff::Graph;
use uniscale_core::model::{ModelConfig, UniScaleModel};
use uniscale_core::prior::PriorConfig;
use uniscale_core::supervision::{loss_scale, scene_loss, TrainingScene};
use uniscale_core::synth::{generate_scene, SceneSpec};

const ALL: PriorConfig = PriorConfig {
    inject_any: true,
    use_pose: true,
    use_intrinsics: true,
    supervise_scale: true,
};

fn scene(metric: bool) -> TrainingScene {
    TrainingScene::new(
        generate_scene(&SceneSpec {
            seed: 21,
            frames: 2,
            width: 16,
            height: 16,
            metric,
            ..SceneSpec::default()
        })
        .unwrap(),
    )
    .unwrap()
}

fn scale_head_grads(model: &mut UniScaleModel, scene: &TrainingScene) -> Vec<f64> {
    let mut g = Graph::new();
    let (total, report, _) = scene_loss(model, &mut g, scene, &ALL).unwrap();
    assert_eq!(report.scale_supervised, scene.metric());
    g.backward(total).unwrap();
    let store = model.params_mut();
    store.zero_grad();
    g.accumulate_param_grads(store);
    model
        .scale_head_param_ids()
        .into_iter()
        .flat_map(|id| model.params().get(id).grad.data().to_vec())
        .collect()
}

#[test]
fn non_metric_batch_sends_no_gradient_into_the_scale_head() {
    let mut model = UniScaleModel::new(ModelConfig::micro()).unwrap();
    let grads = scale_head_grads(&mut model, &scene(false));
    assert!(!grads.is_empty());
    assert!(grads.iter().all(|&g| g == 0.0));

    let grads = scale_head_grads(&mut model, &scene(true));
    assert!(grads.iter().any(|&g| g != 0.0));
}

#[test]
fn unsupervised_scale_loss_is_a_constant_zero() {
    let mut g = Graph::new();
    let s = g.leaf(uniscale_core::autodiff::Tensor::scalar(3.0), true);
    let l = loss_scale(&mut g, s, 2.0, false).unwrap();
    assert_eq!(g.value(l).item().unwrap(), 0.0);
    g.backward(l).unwrap();
    assert!(g.grad(s).map_or(true, |t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn non_metric_scenes_still_get_normalised_targets() {
    let s = scene(false);
    assert!(!s.metric());
    assert!(s.sample.scale.is_none());
    assert!((s.target.mean_point_norm() - 1.0).abs() < 1e-6);
}
