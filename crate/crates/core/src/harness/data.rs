//! Synthetic dataset generation.

use crate::augment::mix_seed;
use crate::error::Result;
use crate::scene::{generate_synthetic_scene, to_canonical_frame, GeneratorConfig, Scene};

/// Seed, and therefore scene id, of the `index`-th scene of a dataset.
pub fn scene_seed(dataset_seed: u64, index: u64) -> u64 {
    mix_seed(dataset_seed, index)
}

/// `count` canonical scenes derived from `seed`.
pub fn generate_dataset(seed: u64, count: usize, cfg: &GeneratorConfig) -> Result<Vec<Scene<f32>>> {
    cfg.validate()?;
    (0..count as u64).map(|i| to_canonical_frame(&generate_synthetic_scene(scene_seed(seed, i), cfg)?)).collect()
}
