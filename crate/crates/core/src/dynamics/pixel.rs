//! Pixel-space autoregressive likelihood on tiny clips.
//!
//! Pixels are visited in raster order over (t, y, x) with channels innermost.
//! The first `N_c = c·H·W` pixels are conditioning; every channel of the
//! remaining `N_p − N_c` pixels contributes one conditional factor. This is a
//! reference for the same prefix/target bookkeeping the latent model uses.

use crate::data::VideoClip;
use crate::{Error, Result};

pub const MAX_FRAMES: usize = 3;
pub const MAX_SIDE: usize = 4;
pub const MAX_CHANNELS: usize = 1;
pub const MAX_LEVELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PixelModel {
    /// Every level equally likely.
    Uniform,
    /// `p(v | history) = (count of v in history + α) / (|history| + α·levels)`.
    Counting { alpha: f64 },
}

impl PixelModel {
    fn conditional(&self, counts: &[usize], seen: usize, v: usize) -> f64 {
        let levels = counts.len() as f64;
        match *self {
            PixelModel::Uniform => 1.0 / levels,
            PixelModel::Counting { alpha } => (counts[v] as f64 + alpha) / (seen as f64 + alpha * levels),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelLikelihood {
    /// N_p = T·H·W.
    pub n_pixels: usize,
    /// N_c = c·H·W.
    pub n_cond: usize,
    /// Number of conditional factors, (N_p − N_c)·N_ch.
    pub factors: usize,
    pub log_likelihood: f64,
}

/// Log-likelihood of `values[n_cond_entries..]` given the prefix, under `model`.
pub fn sequence_log_likelihood(values: &[usize], n_cond_entries: usize, levels: usize, model: PixelModel) -> f64 {
    let mut counts = vec![0usize; levels];
    let mut total = 0.0;
    for (i, &v) in values.iter().enumerate() {
        if i >= n_cond_entries {
            total += model.conditional(&counts, i, v).ln();
        }
        counts[v] += 1;
    }
    total
}

/// Maps [−1, 1] to `levels` evenly spaced integer levels.
pub fn quantize_levels(v: f32, levels: usize) -> usize {
    let x = ((v as f64 + 1.0) / 2.0 * (levels - 1) as f64).round();
    x.clamp(0.0, (levels - 1) as f64) as usize
}

pub fn pixel_factorization_oracle(
    clip: &VideoClip,
    cond_frames: usize,
    levels: usize,
    model: PixelModel,
) -> Result<PixelLikelihood> {
    let (t, c, h, w) = (clip.len(), clip.channels(), clip.height(), clip.width());
    if t > MAX_FRAMES || h > MAX_SIDE || w > MAX_SIDE || c > MAX_CHANNELS || levels > MAX_LEVELS {
        return Err(Error::Capacity(format!(
            "pixel oracle handles at most {MAX_FRAMES}x{MAX_SIDE}x{MAX_SIDE}x{MAX_CHANNELS} with \
             {MAX_LEVELS} levels, got {t}x{h}x{w}x{c} with {levels}"
        )));
    }
    if levels < 2 || cond_frames > t {
        return Err(Error::config(format!(
            "need at least 2 levels and c <= T (levels {levels}, c {cond_frames}, T {t})"
        )));
    }
    let mut values = Vec::with_capacity(t * h * w * c);
    for f in 0..t {
        let frame = clip.frame(f);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    values.push(quantize_levels(frame[(ch * h + y) * w + x], levels));
                }
            }
        }
    }
    let n_pixels = t * h * w;
    let n_cond = cond_frames * h * w;
    Ok(PixelLikelihood {
        n_pixels,
        n_cond,
        factors: (n_pixels - n_cond) * c,
        log_likelihood: sequence_log_likelihood(&values, n_cond * c, levels, model),
    })
}
