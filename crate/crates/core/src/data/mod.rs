//! Synthetic sprite videos, the clip file format and dataset generation.

mod clip;
mod dataset;
mod sprites;

pub use clip::{VideoClip, CLIP_MAGIC};
pub use dataset::{
    clip_seed, config_hash, generate_dataset, read_manifest, Dataset, DatasetConfig, ManifestRecord, Split, DATASET_CONFIG, MANIFEST,
};
pub use sprites::{
    bounce_step, generate_clip, generate_clip_with_actions, render, simulate, simulate_with_actions, Physics,
    SpriteState, SpriteWorldConfig, Trajectory,
};
