//! Deterministic synthetic scenes with exact depth, and their file format.

mod dataset;
mod format;
mod generate;
pub mod scene;

pub use dataset::{make_dataset, scene_family, Dataset, DatasetIndex, Manifest, ManifestEntry, Split, MANIFEST_FILE};
pub use format::{decode_scene, encode_scene, read_scene, write_scene, SCENE_MAGIC, SCENE_VERSION};
pub use generate::{generate_scene, generate_scene_full, look_at, GeneratedScene, SceneSample, SceneSpec};
pub use scene::{Checker, Primitive, Scene, View};
