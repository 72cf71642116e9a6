//! TOML run configurations. Every run writes the fully resolved
//! configuration next to its outputs as `resolved.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::codec::CodecConfig;
use crate::dynamics::DynamicsConfig;
use crate::{Error, Result};

pub const RESOLVED: &str = "resolved.toml";
pub const TRAIN_LOG: &str = "train_log.jsonl";

/// Two-phase codec schedule: reconstruction-only steps, then steps with the
/// adversarial term and alternating discriminator updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSchedule {
    pub phase1_steps: usize,
    pub phase2_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub disc_lr: f64,
    /// Global gradient-norm clip, 0 to disable.
    pub clip_grad: f64,
    /// Multiplier on λ·L_GAN in phase 2.
    pub gan_weight: f64,
    /// Multiplier on the perceptual term in phase 2.
    pub perceptual_weight: f64,
    /// Re-seed codes unused over a window of steps from encoder outputs.
    pub reseed_dead_codes: bool,
    /// Window length in steps; 0 means one pass over the training frames.
    pub reseed_every: usize,
    pub log_every: usize,
    /// Held-out frames scored for PSNR at each log interval.
    pub eval_frames: usize,
}

impl Default for CodecSchedule {
    fn default() -> Self {
        CodecSchedule {
            phase1_steps: 2000,
            phase2_steps: 500,
            batch_size: 16,
            lr: 2e-3,
            disc_lr: 2e-4,
            clip_grad: 1.0,
            gan_weight: 0.1,
            perceptual_weight: 1.0,
            reseed_dead_codes: true,
            reseed_every: 0,
            log_every: 50,
            eval_frames: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecTrainConfig {
    /// Dataset directory written by `gen-data`.
    pub data: PathBuf,
    pub seed: u64,
    pub codec: CodecConfig,
    pub schedule: CodecSchedule,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        CodecTrainConfig {
            data: PathBuf::from("data"),
            seed: 0,
            codec: CodecConfig::default(),
            schedule: CodecSchedule::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsSchedule {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Linear warm-up steps before cosine decay to `lr · final_lr_fraction`.
    pub warmup: usize,
    pub final_lr_fraction: f64,
    pub clip_grad: f64,
    /// Use only the first `clips` training clips; 0 uses all.
    pub clips: usize,
    /// Stop once the mean training loss over the last `log_every` steps
    /// falls below this value; 0 disables.
    pub stop_below: f64,
    pub log_every: usize,
}

impl Default for DynamicsSchedule {
    fn default() -> Self {
        DynamicsSchedule {
            steps: 3000,
            batch_size: 4,
            lr: 1e-3,
            warmup: 100,
            final_lr_fraction: 0.1,
            clip_grad: 1.0,
            clips: 0,
            stop_below: 0.0,
            log_every: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsTrainConfig {
    pub data: PathBuf,
    /// Codec checkpoint; overridden by `--codec`.
    pub codec: PathBuf,
    pub seed: u64,
    pub model: DynamicsConfig,
    pub augment: AugmentConfig,
    pub schedule: DynamicsSchedule,
}

impl Default for DynamicsTrainConfig {
    fn default() -> Self {
        DynamicsTrainConfig {
            data: PathBuf::from("data"),
            codec: PathBuf::from("codec/codec.ckpt"),
            seed: 0,
            model: DynamicsConfig::default(),
            augment: AugmentConfig::default(),
            schedule: DynamicsSchedule::default(),
        }
    }
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn write_toml<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::config(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
