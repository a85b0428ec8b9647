use uniscale_core::autodiff::Checkpoint;
use uniscale_core::model::{ModelConfig, UniScaleModel};
use uniscale_core::supervision::{TrainConfig, Trainer, TrainingScene};
use uniscale_core::synth::{generate_scene, SceneSpec};

fn scenes() -> Vec<TrainingScene> {
    (0..3)
        .map(|i| {
            let s = generate_scene(&SceneSpec {
                seed: 60 + i,
                frames: 3,
                width: 16,
                height: 16,
                metric: i != 1,
                ..SceneSpec::default()
            })
            .unwrap();
            TrainingScene::new(s).unwrap()
        })
        .collect()
}

fn config() -> TrainConfig {
    TrainConfig {
        steps: 8,
        seed: 4,
        frames: Some([2, 3]),
        ..TrainConfig::default()
    }
}

fn trained(until: u64) -> (Trainer, Vec<u8>) {
    let mut t = Trainer::new(UniScaleModel::new(ModelConfig::micro()).unwrap(), config()).unwrap();
    let mut log = Vec::new();
    t.run(&scenes(), until, Some(&mut log), |_| Ok(())).unwrap();
    (t, log)
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let (a, log_a) = trained(8);
    let (b, log_b) = trained(8);
    assert_eq!(a.checkpoint().unwrap().encode(), b.checkpoint().unwrap().encode());
    assert_eq!(log_a, log_b);
    let lines: Vec<&str> = std::str::from_utf8(&log_a).unwrap().lines().collect();
    assert_eq!(lines.len(), 8);
    for l in lines {
        serde_json::from_str::<serde_json::Value>(l).unwrap();
    }
}

#[test]
fn resuming_matches_training_straight_through() {
    let (straight, _) = trained(8);
    let (half, _) = trained(3);
    let bytes = half.checkpoint().unwrap().encode();
    let mut resumed = Trainer::resume(&Checkpoint::decode(&bytes).unwrap()).unwrap();
    assert_eq!(resumed.step, 3);
    resumed.run(&scenes(), 8, None, |_| Ok(())).unwrap();
    assert_eq!(resumed.checkpoint().unwrap().encode(), straight.checkpoint().unwrap().encode());
}

#[test]
fn resume_refuses_a_checkpoint_without_optimizer_state() {
    let m = UniScaleModel::new(ModelConfig::micro()).unwrap();
    assert!(Trainer::resume(&m.to_checkpoint(None).unwrap()).is_err());
    let (t, _) = trained(1);
    let mut c = t.checkpoint().unwrap();
    c.records.retain(|(n, _)| !n.starts_with("adam_v/"));
    assert!(Trainer::resume(&c).is_err());
}
