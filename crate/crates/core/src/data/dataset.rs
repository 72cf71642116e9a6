use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{generate_clip, SpriteWorldConfig, VideoClip};
use crate::params::hex;
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.jsonl";
pub const DATASET_CONFIG: &str = "dataset.toml";

/// Test seeds start half-way through each master seed's 2³² block, so the
/// two streams are disjoint intervals.
const TEST_OFFSET: u64 = 1 << 31;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default)]
    pub world: SpriteWorldConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub file: String,
    pub split: Split,
    pub seed: u64,
    pub config_hash: String,
}

/// Seed of clip `index` in `split`, or a configuration error when the index
/// would leave the split's interval.
pub fn clip_seed(master: u64, split: Split, index: usize) -> Result<u64> {
    if master >= 1 << 32 || index as u64 >= TEST_OFFSET {
        return Err(Error::config(format!(
            "master seed {master} must be < 2^32 and clip index {index} < 2^31"
        )));
    }
    let base = master << 32;
    Ok(match split {
        Split::Train => base + index as u64,
        Split::Test => base + TEST_OFFSET + index as u64,
    })
}

/// SHA-256 of the world configuration's JSON form.
pub fn config_hash(world: &SpriteWorldConfig) -> String {
    let json = serde_json::to_vec(world).expect("world config serializes");
    hex(&Sha256::digest(json))
}

fn clip_name(split: Split, i: usize) -> String {
    format!("{}/clip_{i:05}.bin", split.dir())
}

/// Writes `n_train + n_test` clip files, `dataset.toml` and the manifest
/// under `out`.
pub fn generate_dataset(config: &DatasetConfig, out: &Path) -> Result<Vec<ManifestRecord>> {
    config.world.validate()?;
    let hash = config_hash(&config.world);
    let mut records = Vec::with_capacity(config.n_train + config.n_test);
    for (split, n) in [(Split::Train, config.n_train), (Split::Test, config.n_test)] {
        let dir = out.join(split.dir());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..n {
            let seed = clip_seed(config.seed, split, i)?;
            let clip = generate_clip(&config.world, seed)?;
            let file = clip_name(split, i);
            clip.write(&out.join(&file))?;
            records.push(ManifestRecord {
                file,
                split,
                seed,
                config_hash: hash.clone(),
            });
        }
    }
    let mut manifest = String::new();
    for r in &records {
        manifest.push_str(&serde_json::to_string(r).expect("record serializes"));
        manifest.push('\n');
    }
    let path = out.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    let path = out.join(DATASET_CONFIG);
    let text = toml::to_string(config).map_err(|e| Error::config(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(records)
}

/// The manifest records of the dataset under `root`, in file order.
pub fn read_manifest(root: &Path) -> Result<Vec<ManifestRecord>> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            serde_json::from_str(line).map_err(|e| Error::Format {
                path: path.clone(),
                msg: format!("line {}: {e}", n + 1),
            })
        })
        .collect()
}

/// A generated dataset read back from disk.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub config: DatasetConfig,
    pub train: Vec<VideoClip>,
    pub test: Vec<VideoClip>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Dataset> {
        let cfg_path = root.join(DATASET_CONFIG);
        let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config: DatasetConfig = toml::from_str(&text).map_err(|e| Error::Format {
            path: cfg_path.clone(),
            msg: e.to_string(),
        })?;
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for rec in read_manifest(root)? {
            let mut clip = VideoClip::read(&root.join(&rec.file))?;
            clip.seed = Some(rec.seed);
            match rec.split {
                Split::Train => train.push(clip),
                Split::Test => test.push(clip),
            }
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            config,
            train,
            test,
        })
    }
}
