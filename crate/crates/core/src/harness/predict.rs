//! Multi-sample rollouts written to disk as pixmaps plus raw clip files.
//!
//! ```text
//! out/predict.json
//! out/<clip>/sample_000/frame_00.ppm ... frames.bin
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{check_codec_hash, load_codec, load_dynamics};
use super::ppm::write_ppm;
use crate::codec::Codec;
use crate::data::VideoClip;
use crate::dynamics::{check_pairing, predict_video, Sampler, Transformer};
use crate::{Error, Result};

pub const PREDICT_MANIFEST: &str = "predict.json";
pub const FRAMES_FILE: &str = "frames.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedClip {
    pub name: String,
    /// Clip file the conditioning frames came from.
    pub source: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictManifest {
    pub codec_hash: String,
    pub dynamics_hash: String,
    pub k: usize,
    pub temperature: f64,
    pub seed: u64,
    pub future_steps: usize,
    pub cond_frames: usize,
    pub samples: usize,
    pub clips: Vec<PredictedClip>,
}

impl PredictManifest {
    pub fn read(dir: &Path) -> Result<PredictManifest> {
        let path = dir.join(PREDICT_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format { path, msg: e.to_string() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictOptions {
    pub future_steps: usize,
    pub sampler: Sampler,
    pub seed: u64,
    pub samples: usize,
}

pub fn sample_dir(out: &Path, clip: &str, sample: usize) -> PathBuf {
    out.join(clip).join(format!("sample_{sample:03}"))
}

/// Rng of sample `sample` for the `clip`-th input: one ChaCha stream per
/// (clip, sample) pair under the run seed.
pub fn sample_rng(seed: u64, clip: usize, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((clip as u64) << 32) | sample as u64);
    rng
}

/// Loads a codec and a dynamics model, refusing the pair unless the dynamics
/// checkpoint records this exact codec file.
pub fn load_pair(codec: &Path, dynamics: &Path) -> Result<(Codec, Transformer, String, String)> {
    let (codec, codec_hash) = load_codec(codec)?;
    let (model, recorded, dynamics_hash) = load_dynamics(dynamics)?;
    check_codec_hash(&recorded, &codec_hash)?;
    check_pairing(&codec, &model)?;
    Ok((codec, model, codec_hash, dynamics_hash))
}

fn check_request(model: &Transformer, clip: &VideoClip, name: &str, opts: &PredictOptions) -> Result<()> {
    let cfg = &model.config;
    let total = cfg.cond_frames + opts.future_steps;
    let budget = total * cfg.tokens_per_frame();
    if budget > cfg.context {
        return Err(Error::Capacity(format!(
            "{total} frames x {} tokens = {budget} tokens exceeds the context of {}",
            cfg.tokens_per_frame(),
            cfg.context
        )));
    }
    if clip.len() < cfg.cond_frames {
        return Err(Error::config(format!(
            "{name} has {} frames, the model conditions on {}",
            clip.len(),
            cfg.cond_frames
        )));
    }
    if cfg.action_dim > 0 && clip.actions().map_or(0, |a| a.shape()[0]) < total {
        return Err(Error::config(format!(
            "{name} has actions for fewer than the {total} frames the rollout needs"
        )));
    }
    Ok(())
}

/// Rolls out `opts.samples` futures for each named clip file. Every check
/// runs before the first file is written.
pub fn predict(
    codec_path: &Path,
    dynamics_path: &Path,
    clips: &[(String, PathBuf)],
    opts: &PredictOptions,
    out: &Path,
) -> Result<PredictManifest> {
    if opts.samples == 0 || opts.future_steps == 0 {
        return Err(Error::config("samples and future steps must be positive"));
    }
    if clips.is_empty() {
        return Err(Error::config("no clips to predict from"));
    }
    let mut names: Vec<&str> = clips.iter().map(|(n, _)| n.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::config(format!("clip name {} is given twice", w[0])));
    }
    let (codec, model, codec_hash, dynamics_hash) = load_pair(codec_path, dynamics_path)?;
    let vocab = model.config.vocab;
    if opts.sampler.k == 0 || opts.sampler.k > vocab {
        return Err(Error::config(format!("--k {} is outside [1, {vocab}]", opts.sampler.k)));
    }
    let mut inputs = Vec::with_capacity(clips.len());
    for (name, path) in clips {
        let clip = VideoClip::read(path)?;
        check_request(&model, &clip, name, opts)?;
        inputs.push(clip);
    }

    let manifest = PredictManifest {
        codec_hash,
        dynamics_hash,
        k: opts.sampler.k,
        temperature: opts.sampler.temperature,
        seed: opts.seed,
        future_steps: opts.future_steps,
        cond_frames: model.config.cond_frames,
        samples: opts.samples,
        clips: clips
            .iter()
            .map(|(name, path)| PredictedClip {
                name: name.clone(),
                source: path.clone(),
            })
            .collect(),
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (ci, ((name, _), clip)) in clips.iter().zip(&inputs).enumerate() {
        for s in 0..opts.samples {
            let mut rng = sample_rng(opts.seed, ci, s);
            let pred = predict_video(&codec, &model, clip, opts.future_steps, &opts.sampler, &mut rng)?;
            let dir = sample_dir(out, name, s);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for t in 0..pred.len() {
                write_ppm(
                    &dir.join(format!("frame_{t:02}.ppm")),
                    pred.frame(t),
                    pred.channels(),
                    pred.height(),
                    pred.width(),
                )?;
            }
            pred.write(&dir.join(FRAMES_FILE))?;
        }
    }
    let path = out.join(PREDICT_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::config(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
