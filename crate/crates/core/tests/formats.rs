use std::path::PathBuf;

use uniscale_core::autodiff::{Checkpoint, Tensor};
use uniscale_core::model::{ModelConfig, UniScaleModel};
use uniscale_core::synth::{decode_scene, encode_scene, generate_scene, read_scene, write_scene, SceneSpec};

fn fixture(name: &str) -> Vec<u8> {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", name].iter().collect();
    std::fs::read(p).unwrap()
}

#[test]
fn golden_scene_parses() {
    let bytes = fixture("golden_scene.uscn");
    let s = decode_scene(&bytes).unwrap();
    assert_eq!((s.width, s.height, s.frames()), (2, 2, 1));
    assert!(s.metric);
    assert_eq!(s.scale, Some(2.5));
    assert_eq!(s.intrinsics.fx, 2.0);
    assert_eq!(s.images, [0.0, 0.25, 0.5, 1.0, 0.125, 0.375, 0.625, 0.875, 1.0, 0.5, 0.25, 0.0]);
    assert_eq!(s.depths, [1.5, 2.0, 0.0, 4.0]);
    assert_eq!(encode_scene(&s).unwrap(), bytes);
}

#[test]
fn golden_checkpoint_parses() {
    let bytes = fixture("golden_checkpoint.usck");
    let c = Checkpoint::decode(&bytes).unwrap();
    assert_eq!(c.header, r#"{"note":"golden"}"#);
    let names: Vec<&str> = c.records.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["w", "b", "s"]);
    assert_eq!(c.get("w").unwrap(), &Tensor::new([2, 2], vec![1.0, -2.5, 0.125, 1e-300]).unwrap());
    let b = c.get("b").unwrap().data();
    assert!(b[1] == 0.0 && b[1].is_sign_negative());
    assert_eq!(c.get("s").unwrap().shape(), &[] as &[usize]);
    assert_eq!(c.encode(), bytes);
}

#[test]
fn generated_scene_round_trips_through_a_file() {
    let s = generate_scene(&SceneSpec {
        seed: 8,
        frames: 3,
        width: 20,
        height: 20,
        ..SceneSpec::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.uscn");
    write_scene(&s, &path).unwrap();
    let back = read_scene(&path).unwrap();
    assert_eq!(back, s);
    assert_eq!(encode_scene(&back).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn model_checkpoint_round_trips_bit_exactly() {
    let m = UniScaleModel::new(ModelConfig::micro()).unwrap();
    let c = m.to_checkpoint(None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.usck");
    c.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let back = Checkpoint::decode(&bytes).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.encode(), bytes);
    let (m2, _) = UniScaleModel::from_checkpoint(&back).unwrap();
    assert_eq!(m2.params().value_records(), m.params().value_records());
}

#[test]
fn corrupt_files_are_rejected() {
    let bytes = fixture("golden_scene.uscn");
    assert!(decode_scene(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_scene(&extra).is_err());
    let mut bad = fixture("golden_checkpoint.usck");
    bad[0] = b'X';
    assert!(Checkpoint::decode(&bad).is_err());
}
