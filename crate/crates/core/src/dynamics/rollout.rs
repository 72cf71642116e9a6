//! Incremental inference with a per-rollout key/value cache.
//!
//! Tokens are always fed one at a time, so a rollout that is later extended
//! performs exactly the same arithmetic as one run to the longer horizon.

use lvp_tensor::Tensor;
use rand::Rng;

use super::{Sampler, Transformer};
use crate::codec::{Codec, CodeGrid};
use crate::data::VideoClip;
use crate::nn::{LayerNorm, Linear};
use crate::params::ParamSet;
use crate::{Error, Result};

const LN_EPS: f32 = 1e-5;

fn linear(ps: &ParamSet<f32>, lin: &Linear, x: &[f32]) -> Vec<f32> {
    let w = ps.get(lin.weight);
    let n = w.shape()[1];
    let mut out = ps.get(lin.bias).data().to_vec();
    for (xi, row) in x.iter().zip(w.data().chunks_exact(n)) {
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

fn layer_norm(ps: &ParamSet<f32>, ln: &LayerNorm, x: &[f32]) -> Vec<f32> {
    let inv = 1.0 / x.len() as f32;
    let mu = x.iter().sum::<f32>() * inv;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f32>() * inv;
    let r = 1.0 / (var + LN_EPS).sqrt();
    let (g, b) = (ps.get(ln.gamma).data(), ps.get(ln.beta).data());
    x.iter().zip(g).zip(b).map(|((&v, &g), &b)| (v - mu) * r * g + b).collect()
}

fn gelu(v: f32) -> f32 {
    const C: f32 = 0.797_884_6; // √(2/π)
    0.5 * v * (1.0 + (C * (v + 0.044715 * v * v * v)).tanh())
}

/// Keys and values of every fed token, per layer.
pub struct KvCache<'a> {
    model: &'a Transformer,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
}

impl<'a> KvCache<'a> {
    pub fn new(model: &'a Transformer) -> Self {
        let layers = model.config.layers;
        KvCache {
            model,
            keys: vec![Vec::new(); layers],
            values: vec![Vec::new(); layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feeds the next token and returns the logits for the one after it.
    pub fn step(&mut self, code: usize, action: Option<&[f32]>) -> Result<Vec<f32>> {
        let m = self.model;
        let cfg = &m.config;
        let ps = &m.params;
        let lay = &m.layout;
        if self.len >= cfg.context {
            return Err(Error::Capacity(format!("context of {} tokens is full", cfg.context)));
        }
        if code >= cfg.vocab {
            return Err(Error::config(format!("code {code} outside the vocabulary of {}", cfg.vocab)));
        }
        let (d, heads, dh) = (cfg.width, cfg.heads, cfg.head_dim());
        let s = cfg.tokens_per_frame();
        let (frame, spatial) = (self.len / s, self.len % s);
        let row = |id, r: usize| ps.get(id).data()[r * d..(r + 1) * d].to_vec();
        let mut x = row(lay.tok, code);
        let f = row(lay.frame, m.frame_row(frame));
        let sp = row(lay.spatial, spatial);
        for i in 0..d {
            x[i] = x[i] + f[i] + sp[i];
        }
        if let Some(proj) = &lay.action {
            let a = action.ok_or_else(|| Error::config("model is action-conditioned but no action was given"))?;
            if a.len() != cfg.action_dim {
                return Err(Error::config(format!(
                    "action width {} does not match the model's {}",
                    a.len(),
                    cfg.action_dim
                )));
            }
            for (xi, ai) in x.iter_mut().zip(linear(ps, proj, a)) {
                *xi += ai;
            }
        }
        let scale = 1.0 / (dh as f32).sqrt();
        let n = self.len + 1;
        for (li, blk) in lay.blocks.iter().enumerate() {
            let h = layer_norm(ps, &blk.ln1, &x);
            let q = linear(ps, &blk.q, &h);
            self.keys[li].extend(linear(ps, &blk.k, &h));
            self.values[li].extend(linear(ps, &blk.v, &h));
            let (keys, values) = (&self.keys[li], &self.values[li]);
            let mut att = vec![0.0f32; d];
            let mut scores = vec![0.0f32; n];
            for hd in 0..heads {
                let qh = &q[hd * dh..(hd + 1) * dh];
                for (j, sc) in scores.iter_mut().enumerate() {
                    let kj = &keys[j * d + hd * dh..j * d + (hd + 1) * dh];
                    *sc = qh.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale;
                }
                let mx = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let mut total = 0.0f32;
                for sc in scores.iter_mut() {
                    *sc = (*sc - mx).exp();
                    total += *sc;
                }
                let out = &mut att[hd * dh..(hd + 1) * dh];
                for (j, &p) in scores.iter().enumerate() {
                    let vj = &values[j * d + hd * dh..j * d + (hd + 1) * dh];
                    for (o, &v) in out.iter_mut().zip(vj) {
                        *o += p / total * v;
                    }
                }
            }
            for (xi, oi) in x.iter_mut().zip(linear(ps, &blk.o, &att)) {
                *xi += oi;
            }
            let h = layer_norm(ps, &blk.ln2, &x);
            let h: Vec<f32> = linear(ps, &blk.fc1, &h).into_iter().map(gelu).collect();
            for (xi, hi) in x.iter_mut().zip(linear(ps, &blk.fc2, &h)) {
                *xi += hi;
            }
        }
        self.len = n;
        let x = layer_norm(ps, &lay.ln_f, &x);
        let logits = linear(ps, &lay.head, &x);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logits during rollout".into()));
        }
        Ok(logits)
    }
}

/// Autoregressive generation of future code grids after a conditioning
/// prefix. [`Rollout::extend`] may be called repeatedly; the result equals a
/// single call covering the total horizon under the same rng stream.
pub struct Rollout<'a> {
    cache: KvCache<'a>,
    actions: Option<Vec<Vec<f32>>>,
    next_logits: Vec<f32>,
    unfed: Option<usize>,
    frames: usize,
}

impl<'a> Rollout<'a> {
    /// `actions`, for an action-conditioned model, holds one vector per frame
    /// and must cover every frame that will be generated.
    pub fn new(model: &'a Transformer, cond: &[CodeGrid], actions: Option<Vec<Vec<f32>>>) -> Result<Rollout<'a>> {
        let cfg = &model.config;
        if cond.is_empty() {
            return Err(Error::config("rollout needs at least one conditioning frame"));
        }
        for g in cond {
            if (g.height, g.width) != (cfg.grid_height, cfg.grid_width) {
                return Err(Error::config(format!(
                    "code grid {}x{} does not match the model's {}x{}",
                    g.height, g.width, cfg.grid_height, cfg.grid_width
                )));
            }
        }
        let actions = if cfg.action_dim > 0 {
            Some(actions.ok_or_else(|| Error::config("model is action-conditioned but no actions were given"))?)
        } else {
            None
        };
        let mut r = Rollout {
            cache: KvCache::new(model),
            actions,
            next_logits: Vec::new(),
            unfed: None,
            frames: cond.len(),
        };
        r.check_budget(cond.len())?;
        let tokens: Vec<usize> = cond.iter().flat_map(|g| g.codes.iter().copied()).collect();
        for code in tokens {
            r.feed(code)?;
        }
        Ok(r)
    }

    fn check_budget(&self, total_frames: usize) -> Result<()> {
        let cfg = &self.cache.model.config;
        let s = cfg.tokens_per_frame();
        let budget = total_frames * s;
        if budget > cfg.context {
            return Err(Error::Capacity(format!(
                "{total_frames} frames x {s} tokens = {budget} tokens exceeds the context of {}",
                cfg.context
            )));
        }
        if let Some(a) = &self.actions {
            if a.len() < total_frames {
                return Err(Error::config(format!(
                    "actions cover {} frames but the rollout needs {total_frames}",
                    a.len()
                )));
            }
        }
        Ok(())
    }

    fn feed(&mut self, code: usize) -> Result<()> {
        let frame = self.cache.len() / self.cache.model.config.tokens_per_frame();
        let action = self.actions.as_ref().map(|a| a[frame].as_slice());
        self.next_logits = self.cache.step(code, action)?;
        Ok(())
    }

    /// Samples `frames` more code grids.
    pub fn extend<R: Rng + ?Sized>(&mut self, frames: usize, sampler: &Sampler, rng: &mut R) -> Result<Vec<CodeGrid>> {
        self.check_budget(self.frames + frames)?;
        let cfg = &self.cache.model.config;
        let (gh, gw) = (cfg.grid_height, cfg.grid_width);
        let mut grids = Vec::with_capacity(frames);
        for _ in 0..frames {
            let mut codes = Vec::with_capacity(gh * gw);
            for _ in 0..gh * gw {
                if let Some(code) = self.unfed.take() {
                    self.feed(code)?;
                }
                let code = sampler.sample(&self.next_logits, rng)?;
                codes.push(code);
                self.unfed = Some(code);
            }
            grids.push(CodeGrid::new(gh, gw, codes)?);
            self.frames += 1;
        }
        Ok(grids)
    }
}

/// Checks that a codec and a dynamics model agree on vocabulary and grid.
pub fn check_pairing(codec: &Codec, model: &Transformer) -> Result<()> {
    let (k, grid) = (codec.config.codebook_size, codec.config.grid());
    let m = &model.config;
    if k != m.vocab || grid != (m.grid_height, m.grid_width) {
        return Err(Error::config(format!(
            "codec has K = {k} and a {}x{} grid, dynamics model has K = {} and a {}x{} grid",
            grid.0, grid.1, m.vocab, m.grid_height, m.grid_width
        )));
    }
    Ok(())
}

/// Predicts `future_steps` frames after the first `c` frames of `clip`.
///
/// Action-conditioned models read the clip's actions, which must then cover
/// `c + future_steps` frames. Only the future frames are returned.
pub fn predict_video<R: Rng + ?Sized>(
    codec: &Codec,
    model: &Transformer,
    clip: &VideoClip,
    future_steps: usize,
    sampler: &Sampler,
    rng: &mut R,
) -> Result<VideoClip> {
    check_pairing(codec, model)?;
    let c = model.config.cond_frames;
    if clip.len() < c {
        return Err(Error::config(format!(
            "clip has {} frames, the model conditions on {c}",
            clip.len()
        )));
    }
    if future_steps == 0 {
        return Err(Error::config("future_steps must be positive"));
    }
    let cond = codec.encode_video(&clip.slice(0, c)?)?;
    let actions: Option<Vec<Vec<f32>>> =
        clip.actions().map(|a| a.data().chunks(a.shape()[1]).map(<[f32]>::to_vec).collect());
    let mut rollout = Rollout::new(model, &cond, actions.clone())?;
    let grids = rollout.extend(future_steps, sampler, rng)?;
    let frames = codec.decode_codes(&grids)?;
    let future_actions = match &actions {
        Some(a) if a.len() >= c + future_steps => {
            let w = a[0].len();
            Some(Tensor::new(
                &[future_steps, w],
                a[c..c + future_steps].iter().flatten().copied().collect(),
            )?)
        }
        _ => None,
    };
    let mut out = VideoClip::new(frames, future_actions)?;
    out.seed = clip.seed;
    Ok(out)
}
