use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uniscale_core::autodiff::{Graph, Tensor};
use uniscale_core::model::{ModelConfig, UniScaleModel, Variant};
use uniscale_core::prior::{PriorBundle, PriorEmbeddings};
use uniscale_core::synth::{generate_scene, SceneSpec};

fn scene(frames: usize, size: usize) -> uniscale_core::synth::SceneSample {
    generate_scene(&SceneSpec {
        seed: 5,
        frames,
        width: size,
        height: size,
        ..SceneSpec::default()
    })
    .unwrap()
}

#[test]
fn fresh_scale_head_outputs_exactly_one() {
    for variant in [Variant::Full, Variant::NoCameraToken, Variant::NoAggPatchToken, Variant::NoClassToken] {
        let m = UniScaleModel::new(ModelConfig {
            variant,
            ..ModelConfig::micro()
        })
        .unwrap();
        let s = scene(3, 16);
        for priors in [PriorBundle::empty(), PriorBundle::new(Some(s.poses.clone()), Some(s.intrinsics_list())).unwrap()] {
            let p = m.predict(&s.images_tensor().unwrap(), &priors).unwrap();
            assert_eq!(p.scale, 1.0, "{variant}");
        }
    }
}

fn perturbed_model() -> UniScaleModel {
    let mut m = UniScaleModel::new(ModelConfig::micro()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for id in m.scale_head_param_ids() {
        let p = m.params_mut().get_mut(id);
        p.value = Tensor::uniform(p.value.shape().to_vec(), -0.5, 0.5, &mut rng);
    }
    m
}

#[test]
fn pool_weights_sum_to_one() {
    let m = perturbed_model();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = m.config().embed_dim;
    let mut g = Graph::inference();
    let patches = g.constant(Tensor::uniform(vec![3, 16, c], -3.0, 3.0, &mut rng));
    let (_, w) = m.attention_pool(&mut g, patches).unwrap();
    for frame in g.value(w).data().chunks(16) {
        assert!((frame.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(frame.iter().all(|&x| x > 0.0));
    }
}

#[test]
fn duplicating_frames_leaves_scale_unchanged() {
    let m = perturbed_model();
    let c = m.config().embed_dim;
    let p = m.config().patch_count();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cam = Tensor::uniform(vec![2, c], -1.0, 1.0, &mut rng);
    let pat = Tensor::uniform(vec![2, p, c], -1.0, 1.0, &mut rng);
    let cls = Tensor::uniform(vec![2, c], -1.0, 1.0, &mut rng);
    let twice = |t: &Tensor| {
        let mut shape = t.shape().to_vec();
        shape[0] *= 2;
        Tensor::new(shape, t.data().iter().chain(t.data()).copied().collect()).unwrap()
    };
    let run = |cam: Tensor, pat: Tensor, cls: Tensor| {
        let mut g = Graph::inference();
        let (a, b, d) = (g.constant(cam), g.constant(pat), g.constant(cls));
        let s = m.scale_head(&mut g, a, b, d, &PriorEmbeddings::default()).unwrap();
        g.value(s).item().unwrap()
    };
    let once = run(cam.clone(), pat.clone(), cls.clone());
    let dup = run(twice(&cam), twice(&pat), twice(&cls));
    assert_ne!(once, 1.0);
    assert!((once - dup).abs() <= 1e-12 * once, "{once} vs {dup}");
}

#[test]
fn fresh_prior_encoders_leave_the_forward_pass_bit_identical() {
    let m = UniScaleModel::new(ModelConfig::micro()).unwrap();
    let s = scene(2, 16);
    let images = s.images_tensor().unwrap();
    let off = m.predict(&images, &PriorBundle::empty()).unwrap();
    let on = m
        .predict(&images, &PriorBundle::new(Some(s.poses.clone()), Some(s.intrinsics_list())).unwrap())
        .unwrap();
    assert_eq!(off, on);
}

#[test]
fn metricize_by_powers_of_two_is_exact() {
    let m = UniScaleModel::new(ModelConfig::micro()).unwrap();
    let s = scene(2, 16);
    let p = m.predict(&s.images_tensor().unwrap(), &PriorBundle::empty()).unwrap();
    for k in [2.0, 0.5] {
        let q = p.metricize(k).unwrap();
        assert!(q.depth.data().iter().zip(p.depth.data()).all(|(a, b)| *a == b * k));
        assert!(q.points.data().iter().zip(p.points.data()).all(|(a, b)| *a == b * k));
        for (a, b) in q.cameras.iter().zip(&p.cameras) {
            assert_eq!(a.q, b.q);
            assert_eq!(a.fov, b.fov);
            assert_eq!(a.t, b.t.map(|t| t * k));
        }
        assert_eq!(q.metricize(1.0 / k).unwrap(), p);
    }
    assert!(p.metricize(0.0).is_err());
    assert!(p.metricize(f64::NAN).is_err());
}
