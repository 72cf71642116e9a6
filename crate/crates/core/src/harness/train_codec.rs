//! Two-phase codec training: VQ-VAE steps, then steps that add the
//! adaptively weighted adversarial term with alternating discriminator
//! updates.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lvp_tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::save_codec;
use super::config::{write_toml, CodecTrainConfig, RESOLVED, TRAIN_LOG};
use super::metrics::psnr;
use crate::codec::{
    adaptive_weight_on_tape, discriminator_loss, generator_loss, vqvae_loss, Codec, Discriminator, PerceptualBank,
};
use crate::data::{Dataset, VideoClip};
use crate::params::Adam;
use crate::{Error, Result};

pub const CODEC_CKPT: &str = "codec.ckpt";
pub const LAST_GOOD_CKPT: &str = "codec.last_good.ckpt";

/// Seed offset separating the discriminator's initialization from the codec's.
const DISC_SEED_OFFSET: u64 = 0xd15c;

/// One line of the training log. Step records carry the loss terms, eval
/// records carry the held-out PSNR.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CodecLogRecord {
    pub step: usize,
    pub phase: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub codebook: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub commit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perceptual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gan: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reseeded: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout_psnr: Option<f64>,
}

#[derive(Debug)]
pub struct CodecRun {
    pub codec: Codec,
    /// SHA-256 of the written checkpoint file.
    pub hash: String,
    pub checkpoint: PathBuf,
    pub log: Vec<CodecLogRecord>,
    /// Held-out PSNR at the end of phase 1, when a test split exists.
    pub phase1_psnr: Option<f64>,
    pub final_psnr: Option<f64>,
}

pub(crate) struct JsonlWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl JsonlWriter {
    pub(crate) fn create(path: &Path) -> Result<JsonlWriter> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(JsonlWriter {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub(crate) fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::config(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub(crate) fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// All frames of `clips` stacked as `[N, C, H, W]`.
pub fn stack_frames(clips: &[VideoClip]) -> Result<Tensor<f32>> {
    let first = clips.first().ok_or_else(|| Error::config("no clips to take frames from"))?;
    let (c, h, w) = (first.channels(), first.height(), first.width());
    let mut data = Vec::new();
    let mut n = 0;
    for clip in clips {
        if (clip.channels(), clip.height(), clip.width()) != (c, h, w) {
            return Err(Error::config("clips in a dataset must share one frame shape"));
        }
        data.extend_from_slice(clip.frames().data());
        n += clip.len();
    }
    Ok(Tensor::new(&[n, c, h, w], data)?)
}

fn gather(frames: &Tensor<f32>, idx: &[usize]) -> Result<Tensor<f32>> {
    let s = frames.shape();
    let len = s[1] * s[2] * s[3];
    let mut data = Vec::with_capacity(idx.len() * len);
    for &i in idx {
        data.extend_from_slice(&frames.data()[i * len..(i + 1) * len]);
    }
    Ok(Tensor::new(&[idx.len(), s[1], s[2], s[3]], data)?)
}

/// Mean per-frame PSNR of the codec's reconstructions of `frames`.
pub fn heldout_psnr(codec: &Codec, frames: &Tensor<f32>) -> Result<f64> {
    let n = frames.shape()[0];
    let len = frames.numel() / n.max(1);
    let mut total = 0.0;
    for start in (0..n).step_by(16) {
        let idx: Vec<usize> = (start..(start + 16).min(n)).collect();
        let x = gather(frames, &idx)?;
        let y = codec.reconstruct(&x)?;
        for (a, b) in x.data().chunks(len).zip(y.data().chunks(len)) {
            total += psnr(a, b);
        }
    }
    Ok(total / n as f64)
}

fn record(rec: CodecLogRecord, log: &mut Vec<CodecLogRecord>, f: &mut JsonlWriter) -> Result<()> {
    f.write(&rec)?;
    log.push(rec);
    Ok(())
}

fn finite(name: &str, v: f64, step: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{name} became {v} at step {step}")))
    }
}

/// Trains a codec on the dataset named by `config.data`, writing the
/// checkpoint, the training log and the resolved configuration into `out`.
pub fn train_codec(config: &CodecTrainConfig, out: &Path) -> Result<CodecRun> {
    let sched = &config.schedule;
    if sched.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    config.codec.validate()?;
    let data = Dataset::load(&config.data)?;
    let frames = stack_frames(&data.train)?;
    let shape = (config.codec.channels, config.codec.height, config.codec.width);
    if frames.shape()[1..] != [shape.0, shape.1, shape.2] {
        return Err(Error::config(format!(
            "dataset frames are {:?} but the codec expects {shape:?}",
            &frames.shape()[1..]
        )));
    }
    let heldout = if data.test.is_empty() {
        None
    } else {
        let all = stack_frames(&data.test)?;
        let n = all.shape()[0].min(sched.eval_frames);
        Some(gather(&all, &(0..n).collect::<Vec<_>>())?)
    };

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_toml(config, &out.join(RESOLVED))?;
    let mut log_file = JsonlWriter::create(&out.join(TRAIN_LOG))?;

    let mut codec = Codec::new(config.codec.clone(), config.seed)?;
    let mut disc = Discriminator::new(&config.codec, config.seed.wrapping_add(DISC_SEED_OFFSET))?;
    let bank = PerceptualBank::new(config.codec.channels, &config.codec.perceptual_widths, config.codec.perceptual_seed);
    let clip = (sched.clip_grad > 0.0).then_some(sched.clip_grad);
    let mut opt = Adam::new(sched.lr);
    opt.clip = clip;
    let mut d_opt = Adam::new(sched.disc_lr);
    d_opt.clip = clip;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let n_frames = frames.shape()[0];
    let window = if sched.reseed_every > 0 {
        sched.reseed_every
    } else {
        n_frames.div_ceil(sched.batch_size)
    };
    let k = config.codec.codebook_size;
    let nz = config.codec.code_dim;
    let mut usage = vec![0usize; k];
    let mut log = Vec::new();
    let mut phase1_psnr = None;
    let mut final_psnr = None;
    let total_steps = sched.phase1_steps + sched.phase2_steps;

    for step in 0..total_steps {
        let phase: u8 = if step < sched.phase1_steps { 1 } else { 2 };
        let idx: Vec<usize> = (0..sched.batch_size).map(|_| rng.random_range(0..n_frames)).collect();
        let batch = gather(&frames, &idx)?;

        let mut tape = Tape::<f32>::new();
        let bound = codec.params.bind(&mut tape, true);
        let x = tape.constant(batch.clone());
        let (q, x_hat) = codec.autoencode_graph(&mut tape, &bound, x)?;
        let vq = vqvae_loss(&mut tape, x, x_hat, &q, config.codec.beta)?;
        let mut rec = CodecLogRecord {
            step,
            phase,
            recon: Some(tape.value(vq.recon).item() as f64),
            codebook: Some(tape.value(vq.codebook).item() as f64),
            commit: Some(tape.value(vq.commit).item() as f64),
            ..Default::default()
        };
        let mut fake = None;
        let loss = if phase == 1 {
            vq.total
        } else {
            let perc = bank.distance(&mut tape, x, x_hat)?;
            let weighted = tape.scale(perc, sched.perceptual_weight as f32);
            let recon = tape.add(vq.recon, weighted)?;
            let vq_rest = tape.add(vq.codebook, vq.commit)?;
            let db = disc.params.bind(&mut tape, false);
            let logits = disc.forward(&mut tape, &db, x_hat)?;
            let g = generator_loss(&mut tape, logits);
            let lambda = adaptive_weight_on_tape(
                &mut tape,
                recon,
                g,
                bound[codec.last_layer_id()],
                config.codec.delta,
            )?;
            let gan = tape.scale(g, (sched.gan_weight * lambda) as f32);
            let partial = tape.add(recon, vq_rest)?;
            rec.perceptual = Some(tape.value(perc).item() as f64);
            rec.gan = Some(tape.value(g).item() as f64);
            rec.lambda = Some(lambda);
            fake = Some(tape.value(x_hat).clone());
            tape.add(partial, gan)?
        };
        let loss_value = tape.value(loss).item() as f64;
        rec.loss = Some(loss_value);
        let checked = finite("codec loss", loss_value, step).and_then(|_| {
            tape.backward(loss)?;
            opt.step(&mut codec.params, &tape, &bound)
        });
        if let Err(e) = checked {
            record(rec, &mut log, &mut log_file)?;
            log_file.flush()?;
            save_codec(&codec, &out.join(LAST_GOOD_CKPT))?;
            return Err(e);
        }
        for &c in &q.codes {
            usage[c] += 1;
        }

        if let Some(fake) = fake {
            let mut dt = Tape::<f32>::new();
            let db = disc.params.bind(&mut dt, true);
            let real = dt.constant(batch);
            let fake = dt.constant(fake);
            let real_logits = disc.forward(&mut dt, &db, real)?;
            let fake_logits = disc.forward(&mut dt, &db, fake)?;
            let d_loss = discriminator_loss(&mut dt, real_logits, fake_logits)?;
            let d_value = dt.value(d_loss).item() as f64;
            rec.d_loss = Some(d_value);
            let checked = finite("discriminator loss", d_value, step).and_then(|_| {
                dt.backward(d_loss)?;
                d_opt.step(&mut disc.params, &dt, &db)
            });
            if let Err(e) = checked {
                record(rec, &mut log, &mut log_file)?;
                log_file.flush()?;
                save_codec(&codec, &out.join(LAST_GOOD_CKPT))?;
                return Err(e);
            }
        }

        if phase == 1 && sched.reseed_dead_codes && (step + 1) % window == 0 {
            let rows = tape.value(q.z_e_rows).data().to_vec();
            let n_rows = rows.len() / nz;
            let mut reseeded = 0;
            let cb = codec.codebook_mut();
            for (code, &count) in usage.iter().enumerate() {
                if count == 0 {
                    let r = rng.random_range(0..n_rows);
                    cb.data_mut()[code * nz..(code + 1) * nz].copy_from_slice(&rows[r * nz..(r + 1) * nz]);
                    reseeded += 1;
                }
            }
            rec.reseeded = Some(reseeded);
            usage.iter_mut().for_each(|u| *u = 0);
        }
        record(rec, &mut log, &mut log_file)?;

        let end_of_phase1 = step + 1 == sched.phase1_steps;
        let last = step + 1 == total_steps;
        let periodic = sched.log_every > 0 && (step + 1) % sched.log_every == 0;
        if let Some(h) = &heldout {
            if periodic || end_of_phase1 || last {
                let p = heldout_psnr(&codec, h)?;
                record(
                    CodecLogRecord {
                        step,
                        phase,
                        heldout_psnr: Some(p),
                        ..Default::default()
                    },
                    &mut log,
                    &mut log_file,
                )?;
                if end_of_phase1 {
                    phase1_psnr = Some(p);
                }
                if last {
                    final_psnr = Some(p);
                }
            }
        }
    }
    log_file.flush()?;
    if !codec.params.all_finite() {
        return Err(Error::Numeric("codec parameters are not finite".into()));
    }
    let checkpoint = out.join(CODEC_CKPT);
    let hash = save_codec(&codec, &checkpoint)?;
    Ok(CodecRun {
        codec,
        hash,
        checkpoint,
        log,
        phase1_psnr,
        final_psnr,
    })
}
