use uniscale_core::supervision::{compute_scale_target, DEPTH_CAP_FACTOR};
use uniscale_core::synth::{generate_scene, SceneSpec};

#[test]
fn generated_scenes_normalise_to_unit_mean_norm() {
    for seed in 0..12 {
        let s = generate_scene(&SceneSpec {
            seed,
            width: 32,
            height: 32,
            ..SceneSpec::default()
        })
        .unwrap();
        let t = s.scale_target().unwrap();
        assert!((t.mean_point_norm() - 1.0).abs() < 1e-6, "seed {seed}: {}", t.mean_point_norm());
        assert!(t.s_gt > 0.0);
    }
}

#[test]
fn scale_target_is_one_homogeneous() {
    let s = generate_scene(&SceneSpec {
        seed: 3,
        width: 32,
        height: 32,
        ..SceneSpec::default()
    })
    .unwrap();
    let ks = s.intrinsics_list();
    let base = compute_scale_target(&s.depth_frames(), &ks, &s.poses, DEPTH_CAP_FACTOR).unwrap();
    for c in [0.1, 3.0, 100.0] {
        let depths: Vec<Vec<f64>> = s.depth_frames().iter().map(|d| d.iter().map(|v| v * c).collect()).collect();
        let poses: Vec<_> = s.poses.iter().map(|p| p.scaled(c)).collect();
        let t = compute_scale_target(&depths, &ks, &poses, DEPTH_CAP_FACTOR).unwrap();
        let rel = (t.s_gt - c * base.s_gt).abs() / (c * base.s_gt);
        assert!(rel < 1e-9, "c = {c}: relative error {rel:e}");
        let drift = t
            .depth
            .data()
            .iter()
            .zip(base.depth.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-9, "c = {c}: normalised depth moved by {drift:e}");
    }
}
