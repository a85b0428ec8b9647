use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_scene, read_scene, write_scene, SceneSample, SceneSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// File name relative to the manifest's directory.
    pub path: String,
    pub split: Split,
    pub metric: bool,
    pub frames: usize,
    pub scale: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub scenes: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.scenes.iter().filter(move |e| e.split == split)
    }
}

/// A manifest resolved against the directory it lives in.
#[derive(Clone, Debug)]
pub struct DatasetIndex {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl DatasetIndex {
    /// Accepts the manifest file or the directory holding it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let file = if p.is_dir() { p.join(MANIFEST_FILE) } else { p.to_path_buf() };
        let manifest = Manifest::load(&file)?;
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { dir, manifest })
    }

    pub fn scene_path(&self, e: &ManifestEntry) -> PathBuf {
        self.dir.join(&e.path)
    }

    pub fn load(&self, e: &ManifestEntry) -> Result<SceneSample> {
        let path = self.scene_path(e);
        read_scene(&path).map_err(|err| match err {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Scenes of one split, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<(ManifestEntry, SceneSample)>> {
        let entries: Vec<&ManifestEntry> = self.manifest.entries(split).collect();
        entries.par_iter().map(|e| Ok(((*e).clone(), self.load(e)?))).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<SceneSample>,
}

impl Dataset {
    /// Writes every scene and the manifest into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.manifest
            .scenes
            .par_iter()
            .zip(&self.samples)
            .try_for_each(|(e, s)| write_scene(s, dir.join(&e.path)))?;
        self.manifest.save(dir.join(MANIFEST_FILE))
    }
}

/// `count` specs derived from `base`, each with its own seed; a scene is
/// non-metric with probability `non_metric_fraction`.
pub fn scene_family(base: &SceneSpec, count: usize, non_metric_fraction: f64, seed: u64) -> Vec<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let scene_seed: u64 = rng.random();
            let metric = rng.random::<f64>() >= non_metric_fraction;
            SceneSpec {
                seed: scene_seed,
                metric,
                ..base.clone()
            }
        })
        .collect()
}

/// Generates every scene (concurrently, collected in order) and assigns
/// train/val splits by a seeded shuffle.
pub fn make_dataset(specs: &[SceneSpec], ratios: [f64; 2], seed: u64) -> Result<Dataset> {
    if specs.is_empty() {
        return Err(Error::Config("dataset needs at least one scene spec".into()));
    }
    if ratios.iter().any(|r| *r < 0.0) || (ratios[0] + ratios[1] - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let samples: Vec<SceneSample> = specs.par_iter().map(generate_scene).collect::<Result<_>>()?;
    let n = specs.len();
    let n_train = (ratios[0] * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = vec![Split::Val; n];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }
    let scenes = specs
        .iter()
        .zip(&samples)
        .enumerate()
        .map(|(i, (spec, s))| ManifestEntry {
            path: format!("scene_{i:04}.uscn"),
            split: split[i],
            metric: s.metric,
            frames: s.frames(),
            scale: s.scale,
            seed: spec.seed,
        })
        .collect();
    Ok(Dataset {
        manifest: Manifest { seed, scenes },
        samples,
    })
}
