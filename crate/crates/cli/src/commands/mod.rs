pub mod ablate;
pub mod eval;
pub mod gradcheck;
pub mod infer;
pub mod plot;
pub mod synth;
pub mod train;

use std::path::Path;

use rayon::prelude::*;
use uniscale_core::autodiff::Checkpoint;
use uniscale_core::supervision::TrainingScene;
use uniscale_core::synth::{DatasetIndex, SceneSample, Split};

use crate::error::{CliError, CliResult, Context};

pub(crate) fn parse_split(s: &str) -> CliResult<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        _ => Err(CliError::config(format!("unknown split {s:?}; expected train or val"))),
    }
}

/// Scenes of one split named by their manifest path.
pub(crate) fn load_named(data: &Path, split: Split) -> CliResult<Vec<(String, SceneSample)>> {
    let index = DatasetIndex::open(data).context(format!("dataset {}", data.display()))?;
    let scenes: Vec<(String, SceneSample)> = index
        .load_split(split)?
        .into_iter()
        .map(|(e, s)| (e.path, s))
        .collect();
    if scenes.is_empty() {
        return Err(CliError::data(format!("dataset {} has no {split} scenes", data.display())));
    }
    Ok(scenes)
}

pub(crate) fn training_scenes(named: Vec<(String, SceneSample)>) -> CliResult<Vec<TrainingScene>> {
    Ok(named
        .into_par_iter()
        .map(|(name, s)| TrainingScene::new(s).context(name))
        .collect::<CliResult<_>>()?)
}

pub(crate) fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).context(format!("checkpoint {}", path.display()))
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).context(dir.display())?;
    }
    std::fs::write(path, text).context(path.display())
}
