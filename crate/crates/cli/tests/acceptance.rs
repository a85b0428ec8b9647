//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use uniscale_core::autodiff::{op_suite, Checkpoint, Graph, Tensor, OP_TOLERANCE};
use uniscale_core::error::Result;
use uniscale_core::eval::{
    ablation_run, evaluate, AblationConfig, DepthEstimate, DepthPredictor, EvalConfig, EvalMode, GroundTruth,
};
use uniscale_core::geometry::{matrix_to_quat, matrix_to_rot6d, quat_to_matrix, rot6d_to_matrix, Rot6d};
use uniscale_core::model::{ModelConfig, UniScaleModel, Variant};
use uniscale_core::prior::{PriorBundle, PriorConfig, PriorEmbeddings, PriorProbabilities};
use uniscale_core::supervision::{
    compute_scale_target, model_gradcheck, scene_loss, TrainConfig, Trainer, TrainingScene, DEPTH_CAP_FACTOR,
    MODEL_TOLERANCE,
};
use uniscale_core::synth::{
    decode_scene, encode_scene, generate_scene, read_scene, write_scene, SceneSample, SceneSpec,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scenes(seeds: std::ops::Range<u64>, spec: &SceneSpec) -> Vec<SceneSample> {
    seeds
        .into_par_iter()
        .map(|seed| generate_scene(&SceneSpec { seed, ..spec.clone() }).unwrap())
        .collect()
}

fn named(samples: &[SceneSample]) -> Vec<(String, SceneSample)> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("scene_{i:03}"), s.clone()))
        .collect()
}

fn training(samples: &[SceneSample]) -> Vec<TrainingScene> {
    samples.iter().map(|s| TrainingScene::new(s.clone()).unwrap()).collect()
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let ops = op_suite(0, 20, OP_TOLERANCE).unwrap();
    let failed: Vec<&str> = ops.iter().filter(|c| !c.passed).map(|c| c.op).collect();
    let worst_op = ops.iter().map(|c| c.worst_rel_error).fold(0.0, f64::max);
    let m = model_gradcheck(0, 100, MODEL_TOLERANCE).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        failed.is_empty() && m.passed && secs < 120.0,
        format!(
            "{} ops, worst {worst_op:.2e}, failed {failed:?}; model {} coords checked, worst {:.2e}; {secs:.1}s",
            ops.len(),
            m.checked,
            m.worst_rel_error()
        ),
    )
}

fn rotations() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst6, mut worstq, mut worst_scaled) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = quat_to_matrix(q.map(|v| v / n)).unwrap();
        let six = matrix_to_rot6d(&r).unwrap();
        worst6 = worst6.max((rot6d_to_matrix(&six).unwrap() - r).norm());
        worstq = worstq.max((quat_to_matrix(matrix_to_quat(&r).unwrap()).unwrap() - r).norm());
        let (a, b) = (rng.random_range(0.01..100.0), rng.random_range(0.01..100.0));
        let mut v = six.0;
        v.iter_mut().enumerate().for_each(|(i, x)| *x *= if i < 3 { a } else { b });
        worst_scaled = worst_scaled.max((rot6d_to_matrix(&Rot6d(v)).unwrap() - r).norm());
    }
    outcome(
        worst6 < 1e-9 && worstq < 1e-9 && worst_scaled < 1e-9,
        format!("1000 rotations; Frobenius 6D {worst6:.1e}, quat {worstq:.1e}, scaled halves {worst_scaled:.1e}"),
    )
}

fn scale_targets() -> Outcome {
    let samples = scenes(0..24, &SceneSpec::default());
    let worst_norm = samples
        .iter()
        .map(|s| (s.scale_target().unwrap().mean_point_norm() - 1.0).abs())
        .fold(0.0, f64::max);
    let mut worst_homog = 0.0f64;
    for s in &samples[..6] {
        let ks = s.intrinsics_list();
        let base = compute_scale_target(&s.depth_frames(), &ks, &s.poses, DEPTH_CAP_FACTOR).unwrap();
        for c in [0.1, 3.0, 100.0] {
            let d: Vec<Vec<f64>> = s.depth_frames().iter().map(|f| f.iter().map(|v| v * c).collect()).collect();
            let p: Vec<_> = s.poses.iter().map(|p| p.scaled(c)).collect();
            let t = compute_scale_target(&d, &ks, &p, DEPTH_CAP_FACTOR).unwrap();
            worst_homog = worst_homog.max((t.s_gt - c * base.s_gt).abs() / (c * base.s_gt));
        }
    }
    outcome(
        worst_norm <= 1e-6 && worst_homog <= 1e-9,
        format!("24 scenes, worst |mean norm - 1| {worst_norm:.1e}; worst homogeneity error {worst_homog:.1e}"),
    )
}

fn scale_head() -> Outcome {
    let s = generate_scene(&SceneSpec {
        seed: 7,
        frames: 3,
        width: 16,
        height: 16,
        ..SceneSpec::default()
    })
    .unwrap();
    let images = s.images_tensor().unwrap();
    let all = PriorBundle::new(Some(s.poses.clone()), Some(s.intrinsics_list())).unwrap();
    let mut exact_one = true;
    for variant in Variant::ALL.into_iter().filter(|v| v.has_scale_head()) {
        let m = UniScaleModel::new(ModelConfig {
            variant,
            ..ModelConfig::micro()
        })
        .unwrap();
        for p in [&PriorBundle::empty(), &all] {
            exact_one &= m.predict(&images, p).unwrap().scale == 1.0;
        }
    }

    let mut m = UniScaleModel::new(ModelConfig::micro()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for id in m.scale_head_param_ids() {
        let p = m.params_mut().get_mut(id);
        p.value = Tensor::uniform(p.value.shape().to_vec(), -0.5, 0.5, &mut rng);
    }
    let (c, np) = (m.config().embed_dim, m.config().patch_count());
    let mut g = Graph::inference();
    let patches = g.constant(Tensor::uniform(vec![4, np, c], -3.0, 3.0, &mut rng));
    let (_, w) = m.attention_pool(&mut g, patches).unwrap();
    let pool_err = g
        .value(w)
        .data()
        .chunks(np)
        .map(|f| (f.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);

    let cam = Tensor::uniform(vec![2, c], -1.0, 1.0, &mut rng);
    let pat = Tensor::uniform(vec![2, np, c], -1.0, 1.0, &mut rng);
    let cls = Tensor::uniform(vec![2, c], -1.0, 1.0, &mut rng);
    let twice = |t: &Tensor| {
        let mut shape = t.shape().to_vec();
        shape[0] *= 2;
        Tensor::new(shape, t.data().iter().chain(t.data()).copied().collect()).unwrap()
    };
    let run = |a: Tensor, b: Tensor, d: Tensor| {
        let mut g = Graph::inference();
        let (a, b, d) = (g.constant(a), g.constant(b), g.constant(d));
        let s = m.scale_head(&mut g, a, b, d, &PriorEmbeddings::default()).unwrap();
        g.value(s).item().unwrap()
    };
    let once = run(cam.clone(), pat.clone(), cls.clone());
    let dup = run(twice(&cam), twice(&pat), twice(&cls));
    let dup_err = (once - dup).abs() / once;
    outcome(
        exact_one && pool_err <= 1e-12 && dup_err <= 1e-12,
        format!("fresh S == 1: {exact_one}; pool weight sum error {pool_err:.1e}; duplication drift {dup_err:.1e}"),
    )
}

fn masking() -> Outcome {
    let s = generate_scene(&SceneSpec {
        seed: 9,
        frames: 2,
        width: 16,
        height: 16,
        metric: false,
        ..SceneSpec::default()
    })
    .unwrap();
    let scene = TrainingScene::new(s).unwrap();
    let mut m = UniScaleModel::new(ModelConfig::micro()).unwrap();
    let cfg = PriorConfig {
        inject_any: true,
        use_pose: true,
        use_intrinsics: true,
        supervise_scale: true,
    };
    let mut g = Graph::new();
    let (total, _, _) = scene_loss(&m, &mut g, &scene, &cfg).unwrap();
    g.backward(total).unwrap();
    m.params_mut().zero_grad();
    g.accumulate_param_grads(m.params_mut());
    let grads: Vec<f64> = m
        .scale_head_param_ids()
        .into_iter()
        .flat_map(|id| m.params().get(id).grad.data().to_vec())
        .collect();
    let nonzero = grads.iter().filter(|&&v| v != 0.0).count();
    outcome(nonzero == 0, format!("{} scale-head gradient entries, {nonzero} nonzero", grads.len()))
}

fn overfit() -> Outcome {
    let t = Instant::now();
    let samples = scenes(100..104, &SceneSpec::default());
    let train = training(&samples);
    let cfg = TrainConfig {
        steps: 2000,
        priors: PriorProbabilities::none(),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(UniScaleModel::new(ModelConfig::default()).unwrap(), cfg).unwrap();
    trainer.run(&train, 2000, None, |_| Ok(())).unwrap();
    let r = evaluate(&trainer.model, &named(&samples), &EvalConfig::default()).unwrap();
    let ratios: Vec<f64> = r.scenes.iter().map(|s| s.scale_ratio().unwrap()).collect();
    let in_band = ratios.iter().all(|q| (q - 1.0).abs() <= 0.10);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        r.rel < 5.0 && in_band && secs < 1800.0,
        format!(
            "2000 steps, aligned rel {:.3}, tau {:.1}, S_pred/S_gt {:?}; {secs:.0}s",
            r.rel,
            r.tau,
            ratios.iter().map(|q| format!("{q:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn prior_benefit() -> Outcome {
    let spec = SceneSpec::default();
    let train = training(&scenes(1000..1024, &spec));
    let held_out = named(&scenes(2000..2020, &spec));
    let cfg = TrainConfig {
        steps: 2000,
        frames: Some([2, 4]),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(UniScaleModel::new(ModelConfig::default()).unwrap(), cfg).unwrap();
    trainer.run(&train, 2000, None, |_| Ok(())).unwrap();
    let base = EvalConfig::default();
    let none = evaluate(&trainer.model, &held_out, &base).unwrap();
    let kp = evaluate(&trainer.model, &held_out, &base.with_priors(true, true)).unwrap();
    outcome(
        kp.rel <= none.rel,
        format!(
            "20 held-out scenes, aligned rel K+P {:.3} vs none {:.3} (tau {:.1} vs {:.1})",
            kp.rel, none.rel, kp.tau, none.tau
        ),
    )
}

fn rotation_ablation() -> Outcome {
    let spec = SceneSpec::default();
    let train = training(&scenes(3000..3012, &spec));
    let eval = named(&scenes(4000..4008, &spec));
    let cfg = AblationConfig {
        variants: vec![Variant::QuatPoseEncoder],
        ..AblationConfig::default()
    };
    let report = ablation_run(&cfg, &train, &eval).unwrap();
    let (rel, tau) = report.curve_series();
    let (rel_svg, tau_svg) = report.curves_svg();
    let paired = rel.len() == 2 && tau.len() == 2 && rel.iter().all(|s| s.points.len() == cfg.views.len());
    let drawn = rel_svg.matches("<polyline").count() == 2 && tau_svg.matches("<polyline").count() == 2;
    let fmt = |s: &uniscale_core::eval::Series| {
        let pts: Vec<String> = s.points.iter().map(|(x, y)| format!("{x}:{y:.2}")).collect();
        format!("{} [{}]", s.label, pts.join(" "))
    };
    outcome(
        paired && drawn,
        format!("{} steps each; rel {}; {}", cfg.train.steps, fmt(&rel[0]), fmt(&rel[1])),
    )
}

struct Scaled(f64);

impl DepthPredictor for Scaled {
    fn estimate(&self, scene: &SceneSample, _: &PriorBundle) -> Result<DepthEstimate> {
        let depth = scene
            .depth_frames()
            .into_iter()
            .map(|d| {
                d.iter()
                    .enumerate()
                    .map(|(i, v)| v * self.0 * (1.0 + 0.15 * ((i as f64) * 1.3).cos()))
                    .collect()
            })
            .collect();
        Ok(DepthEstimate { depth, scale: self.0 })
    }
}

fn eval_identities() -> Outcome {
    let samples = named(&scenes(500..506, &SceneSpec::default()));
    let base = evaluate(&Scaled(1.0), &samples, &EvalConfig::default()).unwrap();
    let drift = [1e-3, 0.5, 7.0, 1e5]
        .iter()
        .map(|&k| (evaluate(&Scaled(k), &samples, &EvalConfig::default()).unwrap().rel - base.rel).abs())
        .fold(0.0, f64::max);
    let mut perfect = true;
    for mode in [EvalMode::Metric, EvalMode::Aligned] {
        let r = evaluate(&GroundTruth, &samples, &EvalConfig { mode, ..EvalConfig::default() }).unwrap();
        perfect &= r.rel == 0.0 && r.tau == 100.0;
    }
    outcome(
        drift <= 1e-12 && perfect,
        format!("aligned rel drift under scaling {drift:.1e}; ground truth rel 0 / tau 100 in both modes: {perfect}"),
    )
}

fn cli(args: &[&str]) -> bool {
    let mut v = vec!["uniscale"];
    v.extend_from_slice(args);
    uniscale_cli::run_args(v).is_ok()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let ok = cli(&["synth", "--out", p(&data), "--scenes", "6", "--frames", "3", "--image-size", "16", "--non-metric-fraction", "0.3"]);
    let train = |out: &PathBuf, extra: &[&str]| {
        let mut a = vec![
            "train", "--data", p(&data), "--out", p(out), "--steps", "12", "--seed", "5", "--image-size", "16",
            "--patch-size", "4", "--embed-dim", "8", "--aggregator-blocks", "2", "--attention-heads", "2",
            "--register-count", "2", "--dense-channels", "4,4", "--checkpoint-every", "6", "--min-frames", "2",
            "--max-frames", "3",
        ];
        a.extend_from_slice(extra);
        cli(&a)
    };
    let (a, b, c) = (d.join("a"), d.join("b"), d.join("c"));
    let ran = ok && train(&a, &[]) && train(&b, &[]);
    let resume = a.join("checkpoint_000006.usck");
    let ran = ran && train(&c, &["--resume", p(&resume)]);
    if !ran {
        return outcome(false, "a command failed");
    }
    let read = |dir: &Path| std::fs::read(dir.join("checkpoint.usck")).unwrap();
    let identical = read(&a) == read(&b);
    let resumed = read(&a) == read(&c);
    outcome(
        identical && resumed,
        format!("two runs bit-identical: {identical}; resume at step 6 to 12 bit-identical: {resumed}"),
    )
}

fn formats() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    for seed in 0..4 {
        let s = generate_scene(&SceneSpec {
            seed,
            ..SceneSpec::default()
        })
        .unwrap();
        let path = dir.path().join(format!("{seed}.uscn"));
        write_scene(&s, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let back = read_scene(&path).unwrap();
        ok &= back == s && encode_scene(&back).unwrap() == bytes;
    }
    let m = UniScaleModel::new(ModelConfig::default()).unwrap();
    let c = m.to_checkpoint(None).unwrap();
    let path = dir.path().join("m.usck");
    c.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let back = Checkpoint::decode(&bytes).unwrap();
    ok &= back == c && back.encode() == bytes;

    let fixtures: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "tests", "fixtures"].iter().collect();
    let scene_bytes = std::fs::read(fixtures.join("golden_scene.uscn")).unwrap();
    let golden_scene = decode_scene(&scene_bytes)
        .map(|s| s.depths == [1.5, 2.0, 0.0, 4.0] && s.scale == Some(2.5) && encode_scene(&s).unwrap() == scene_bytes)
        .unwrap_or(false);
    let ck_bytes = std::fs::read(fixtures.join("golden_checkpoint.usck")).unwrap();
    let golden_ck = Checkpoint::decode(&ck_bytes)
        .map(|c| c.get("w").map(|t| t.data().to_vec()) == Some(vec![1.0, -2.5, 0.125, 1e-300]) && c.encode() == ck_bytes)
        .unwrap_or(false);
    outcome(
        ok && golden_scene && golden_ck,
        format!("round trips bit-exact: {ok}; golden scene: {golden_scene}; golden checkpoint: {golden_ck}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient suite", gradients),
        ("rotation suite", rotations),
        ("scale-target suite", scale_targets),
        ("scale-head unit suite", scale_head),
        ("masking suite", masking),
        ("overfit run", overfit),
        ("prior-benefit trend", prior_benefit),
        ("6D vs quaternion ablation", rotation_ablation),
        ("evaluation-mode identities", eval_identities),
        ("determinism", determinism),
        ("format suite", formats),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let o = check();
        println!("{} criterion {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
