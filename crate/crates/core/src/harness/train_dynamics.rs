//! Dynamics training against a frozen codec.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use lvp_tensor::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_codec, save_dynamics};
use super::config::{write_toml, DynamicsSchedule, DynamicsTrainConfig, RESOLVED, TRAIN_LOG};
use super::train_codec::JsonlWriter;
use crate::augment::translate_clip;
use crate::codec::Codec;
use crate::data::{Dataset, VideoClip};
use crate::dynamics::{check_pairing, flatten_codes, nll_loss, TokenSequence, Transformer};
use crate::params::Adam;
use crate::{Error, Result};

pub const DYNAMICS_CKPT: &str = "dynamics.ckpt";
pub const LAST_GOOD_CKPT: &str = "dynamics.last_good.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsLogRecord {
    pub step: usize,
    pub lr: f64,
    /// Mean nats per target token over the batch.
    pub loss: f64,
    /// Target tokens in the batch.
    pub tokens: usize,
}

#[derive(Debug)]
pub struct DynamicsRun {
    pub model: Transformer,
    pub codec: Codec,
    /// SHA-256 of the codec checkpoint file the model is paired with.
    pub codec_hash: String,
    /// SHA-256 of the written dynamics checkpoint.
    pub hash: String,
    pub checkpoint: PathBuf,
    pub log: Vec<DynamicsLogRecord>,
    /// Mean loss over the last `log_every` steps.
    pub final_loss: f64,
    pub steps: usize,
}

/// Linear warm-up to `lr`, then cosine decay to `lr · final_lr_fraction`
/// at the last step.
pub fn learning_rate(s: &DynamicsSchedule, step: usize) -> f64 {
    if step < s.warmup {
        return s.lr * (step + 1) as f64 / s.warmup as f64;
    }
    let span = s.steps.saturating_sub(s.warmup).max(1);
    let progress = ((step - s.warmup) as f64 / span as f64).min(1.0);
    let floor = s.lr * s.final_lr_fraction;
    floor + (s.lr - floor) * 0.5 * (1.0 + (PI * progress).cos())
}

/// Token sequence of a clip under a frozen codec, truncated to the model's
/// training horizon. Actions are attached only for action-conditioned models.
pub fn encode_clip(codec: &Codec, model: &Transformer, clip: &VideoClip) -> Result<TokenSequence> {
    let cfg = &model.config;
    let clip = if clip.len() > cfg.frames {
        clip.slice(0, cfg.frames)?
    } else {
        clip.clone()
    };
    if clip.len() <= cfg.cond_frames {
        return Err(Error::config(format!(
            "clip has {} frames; at least {} are needed to predict after {} conditioning frames",
            clip.len(),
            cfg.cond_frames + 1,
            cfg.cond_frames
        )));
    }
    let actions = if cfg.action_dim > 0 {
        let a = clip
            .actions()
            .ok_or_else(|| Error::config("model is action-conditioned but the clips carry no actions"))?;
        if a.shape()[1] != cfg.action_dim {
            return Err(Error::config(format!(
                "clips carry {}-wide actions, the model expects {}",
                a.shape()[1],
                cfg.action_dim
            )));
        }
        Some(a)
    } else {
        None
    };
    let grids = codec.encode_video(&clip)?;
    flatten_codes(&grids, cfg.cond_frames, actions)
}

/// Mean nats per target token of `model` over `clips`.
pub fn nats_per_token(codec: &Codec, model: &Transformer, clips: &[VideoClip]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for clip in clips {
        let seq = encode_clip(codec, model, clip)?;
        let mut tape = Tape::<f32>::new();
        let b = model.params.bind(&mut tape, false);
        let logits = model.forward_logits(&mut tape, &b, std::slice::from_ref(&seq))?;
        let loss = nll_loss(&mut tape, logits, std::slice::from_ref(&seq))?;
        total += tape.value(loss).item() as f64 * seq.n_targets() as f64;
        count += seq.n_targets();
    }
    if count == 0 {
        return Err(Error::config("no clips to score"));
    }
    Ok(total / count as f64)
}

fn frozen(codec: &Codec, expected: &str) -> Result<()> {
    let now = codec.params.content_hash();
    if now != expected {
        return Err(Error::Mismatch(format!(
            "codec parameters changed during dynamics training ({expected} -> {now})"
        )));
    }
    Ok(())
}

/// Trains a dynamics model on codes from the frozen codec at `config.codec`.
pub fn train_dynamics(config: &DynamicsTrainConfig, out: &Path) -> Result<DynamicsRun> {
    let sched = &config.schedule;
    if sched.batch_size == 0 || sched.steps == 0 {
        return Err(Error::config("steps and batch_size must be positive"));
    }
    if !(0.0..=1.0).contains(&sched.final_lr_fraction) {
        return Err(Error::config("final_lr_fraction must lie in [0, 1]"));
    }
    config.model.validate()?;
    let (codec, codec_hash) = load_codec(&config.codec)?;
    let mut model = Transformer::new(config.model.clone(), config.seed)?;
    check_pairing(&codec, &model)?;
    config.augment.validate(codec.config.height, codec.config.width)?;
    let data = Dataset::load(&config.data)?;
    let clips: Vec<VideoClip> = match sched.clips {
        0 => data.train,
        n if n <= data.train.len() => data.train[..n].to_vec(),
        n => {
            return Err(Error::config(format!(
                "schedule asks for {n} clips, the dataset has {}",
                data.train.len()
            )))
        }
    };
    if clips.is_empty() {
        return Err(Error::config("the dataset has no training clips"));
    }
    let codec_params = codec.params.content_hash();
    let pre_encoded = if config.augment.m == 0 {
        Some(clips.iter().map(|c| encode_clip(&codec, &model, c)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut resolved = config.clone();
    resolved.model = model.config.clone();
    write_toml(&resolved, &out.join(RESOLVED))?;
    let mut log_file = JsonlWriter::create(&out.join(TRAIN_LOG))?;

    let mut opt = Adam::new(sched.lr);
    opt.clip = (sched.clip_grad > 0.0).then_some(sched.clip_grad);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = Vec::with_capacity(sched.steps);
    let window = sched.log_every.max(1);

    for step in 0..sched.steps {
        let idx: Vec<usize> = (0..sched.batch_size).map(|_| rng.random_range(0..clips.len())).collect();
        let seqs: Vec<TokenSequence> = match &pre_encoded {
            Some(all) => idx.iter().map(|&i| all[i].clone()).collect(),
            None => idx
                .iter()
                .map(|&i| {
                    let shifted = translate_clip(&clips[i], &mut rng, &config.augment)?;
                    encode_clip(&codec, &model, &shifted)
                })
                .collect::<Result<_>>()?,
        };
        let lr = learning_rate(sched, step);
        let mut tape = Tape::<f32>::new();
        let b = model.params.bind(&mut tape, true);
        let logits = model.forward_logits(&mut tape, &b, &seqs)?;
        let loss = nll_loss(&mut tape, logits, &seqs)?;
        let value = tape.value(loss).item() as f64;
        let rec = DynamicsLogRecord {
            step,
            lr,
            loss: value,
            tokens: seqs.iter().map(TokenSequence::n_targets).sum(),
        };
        log_file.write(&rec)?;
        log.push(rec);
        let checked = if value.is_finite() {
            tape.backward(loss)
                .map_err(Error::from)
                .and_then(|_| opt.step_with_lr(&mut model.params, &tape, &b, lr))
        } else {
            Err(Error::Numeric(format!("dynamics loss became {value} at step {step}")))
        };
        if let Err(e) = checked {
            log_file.flush()?;
            save_dynamics(&model, &codec_hash, &out.join(LAST_GOOD_CKPT))?;
            return Err(e);
        }
        if sched.log_every > 0 && (step + 1) % sched.log_every == 0 {
            frozen(&codec, &codec_params)?;
        }
        if sched.stop_below > 0.0 && log.len() >= window {
            let recent = &log[log.len() - window..];
            if recent.iter().map(|r| r.loss).sum::<f64>() / (window as f64) < sched.stop_below {
                break;
            }
        }
    }
    log_file.flush()?;
    frozen(&codec, &codec_params)?;
    let checkpoint = out.join(DYNAMICS_CKPT);
    let hash = save_dynamics(&model, &codec_hash, &checkpoint)?;
    let tail = &log[log.len().saturating_sub(window)..];
    let final_loss = tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64;
    Ok(DynamicsRun {
        steps: log.len(),
        model,
        codec,
        codec_hash,
        hash,
        checkpoint,
        log,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays_to_the_floor() {
        let s = DynamicsSchedule {
            steps: 110,
            warmup: 10,
            lr: 1e-3,
            final_lr_fraction: 0.1,
            ..Default::default()
        };
        assert!((learning_rate(&s, 0) - 1e-4).abs() < 1e-15);
        assert!((learning_rate(&s, 9) - 1e-3).abs() < 1e-15);
        assert!((learning_rate(&s, 10) - 1e-3).abs() < 1e-15);
        assert!((learning_rate(&s, 110) - 1e-4).abs() < 1e-15);
        let lrs: Vec<f64> = (10..110).map(|i| learning_rate(&s, i)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
