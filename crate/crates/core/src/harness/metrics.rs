use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Mean absolute difference of pixels in [−1, 1].
pub fn mae(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64
}

/// Peak signal-to-noise ratio with pixels mapped to [0, 1], capped at 99 dB.
pub fn psnr(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mse = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (*x as f64 - *y as f64) / 2.0;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodebookStats {
    /// exp of the entropy (nats) of the empirical code histogram.
    pub perplexity: f64,
    /// Fraction of the K codes used at least once.
    pub usage: f64,
}

pub fn codebook_stats(codes: &[usize], k: usize) -> Result<CodebookStats> {
    if codes.is_empty() || k == 0 {
        return Err(Error::config("codebook statistics need at least one code"));
    }
    let mut hist = vec![0usize; k];
    for &c in codes {
        if c >= k {
            return Err(Error::config(format!("code {c} outside a codebook of {k}")));
        }
        hist[c] += 1;
    }
    let n = codes.len() as f64;
    let entropy: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    Ok(CodebookStats {
        perplexity: entropy.exp(),
        usage: hist.iter().filter(|&&c| c > 0).count() as f64 / k as f64,
    })
}

/// Scores of one predicted sample against its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub psnr: Vec<f64>,
    pub mae: Vec<f64>,
    pub mean_psnr: f64,
    pub mean_mae: f64,
}

impl SampleScore {
    /// Per-frame scores of `pred` against `truth`, both frame-major with
    /// `frame_len` values per frame.
    pub fn new(pred: &[f32], truth: &[f32], frame_len: usize) -> Result<SampleScore> {
        if pred.len() != truth.len() || frame_len == 0 || pred.len() % frame_len != 0 {
            return Err(Error::config(format!(
                "prediction ({} values) and truth ({} values) do not align in frames of {frame_len}",
                pred.len(),
                truth.len()
            )));
        }
        let psnr: Vec<f64> = pred
            .chunks(frame_len)
            .zip(truth.chunks(frame_len))
            .map(|(p, t)| self::psnr(p, t))
            .collect();
        let mae: Vec<f64> = pred
            .chunks(frame_len)
            .zip(truth.chunks(frame_len))
            .map(|(p, t)| self::mae(p, t))
            .collect();
        Ok(SampleScore {
            mean_psnr: mean(&psnr),
            mean_mae: mean(&mae),
            psnr,
            mae,
        })
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Best-over-samples scores for one ground-truth clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEval {
    pub clip: String,
    pub samples: Vec<SampleScore>,
    /// Highest mean PSNR over the samples.
    pub best_psnr: f64,
    /// Lowest mean MAE over the samples.
    pub best_mae: f64,
    /// Lowest first-frame MAE over the samples.
    pub best_first_frame_mae: f64,
}

impl ClipEval {
    pub fn new(clip: String, samples: Vec<SampleScore>) -> Result<ClipEval> {
        if samples.is_empty() {
            return Err(Error::config(format!("no predicted samples for {clip}")));
        }
        let best_psnr = samples.iter().map(|s| s.mean_psnr).fold(f64::NEG_INFINITY, f64::max);
        let best_mae = samples.iter().map(|s| s.mean_mae).fold(f64::INFINITY, f64::min);
        let best_first_frame_mae = samples.iter().map(|s| s.mae[0]).fold(f64::INFINITY, f64::min);
        Ok(ClipEval {
            clip,
            samples,
            best_psnr,
            best_mae,
            best_first_frame_mae,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub codec_hash: Option<String>,
    pub dynamics_hash: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub clips: Vec<ClipEval>,
    /// Means of the per-clip best scores.
    pub psnr: f64,
    pub mae: f64,
    pub first_frame_mae: f64,
    pub codebook: Option<CodebookStats>,
    pub nats_per_token: Option<f64>,
    pub k: Option<usize>,
    pub temperature: Option<f64>,
    pub provenance: Provenance,
}

impl EvalReport {
    pub fn new(clips: Vec<ClipEval>) -> Result<EvalReport> {
        if clips.is_empty() {
            return Err(Error::config("nothing to evaluate"));
        }
        let agg = |f: fn(&ClipEval) -> f64| mean(&clips.iter().map(f).collect::<Vec<_>>());
        Ok(EvalReport {
            psnr: agg(|c| c.best_psnr),
            mae: agg(|c| c.best_mae),
            first_frame_mae: agg(|c| c.best_first_frame_mae),
            clips,
            codebook: None,
            nats_per_token: None,
            k: None,
            temperature: None,
            provenance: Provenance::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_hit_the_cap() {
        let a = [0.1f32, -0.5, 0.9];
        assert_eq!(psnr(&a, &a), PSNR_CAP);
        assert_eq!(mae(&a, &a), 0.0);
    }

    #[test]
    fn full_range_error_is_zero_decibels() {
        assert!(psnr(&[-1.0], &[1.0]).abs() < 1e-12);
    }

    #[test]
    fn uniform_and_collapsed_histograms() {
        let all: Vec<usize> = (0..256).collect();
        let s = codebook_stats(&all, 256).unwrap();
        assert!((s.perplexity - 256.0).abs() < 1e-9);
        assert_eq!(s.usage, 1.0);
        let s = codebook_stats(&[7; 50], 256).unwrap();
        assert_eq!(s.perplexity, 1.0);
        assert_eq!(s.usage, 1.0 / 256.0);
    }
}
