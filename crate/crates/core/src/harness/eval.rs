//! Scoring of a prediction directory against ground-truth clips.

use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::{codebook_stats, ClipEval, CodebookStats, EvalReport, Provenance, SampleScore};
use super::predict::{load_pair, sample_dir, PredictManifest, FRAMES_FILE};
use super::train_dynamics::nats_per_token;
use crate::codec::Codec;
use crate::data::VideoClip;
use crate::{Error, Result};

pub const EVAL_REPORT: &str = "eval.json";

/// The future frames `[c, c + n)` of `truth`, flattened.
pub fn truth_future(truth: &VideoClip, c: usize, n: usize, name: &str) -> Result<Vec<f32>> {
    if truth.len() < c + n {
        return Err(Error::config(format!(
            "ground truth {name} has {} frames, the prediction covers frames {c}..{}",
            truth.len(),
            c + n
        )));
    }
    let len = truth.frame_len();
    Ok(truth.frames().data()[c * len..(c + n) * len].to_vec())
}

/// Scores each sample against the truth future and keeps the best per clip.
pub fn score_samples(name: &str, samples: &[VideoClip], truth: &VideoClip, c: usize) -> Result<ClipEval> {
    let mut scores = Vec::with_capacity(samples.len());
    for pred in samples {
        if (pred.channels(), pred.height(), pred.width()) != (truth.channels(), truth.height(), truth.width()) {
            return Err(Error::config(format!(
                "prediction frames of {name} are {}x{}x{}, ground truth is {}x{}x{}",
                pred.channels(),
                pred.height(),
                pred.width(),
                truth.channels(),
                truth.height(),
                truth.width()
            )));
        }
        let future = truth_future(truth, c, pred.len(), name)?;
        scores.push(SampleScore::new(pred.frames().data(), &future, truth.frame_len())?);
    }
    ClipEval::new(name.to_string(), scores)
}

/// Codebook usage of the codes `codec` assigns to every frame of `clips`.
pub fn clip_codebook_stats(codec: &Codec, clips: &[VideoClip]) -> Result<CodebookStats> {
    let mut codes = Vec::new();
    for clip in clips {
        for g in codec.encode_video(clip)? {
            codes.extend(g.codes);
        }
    }
    codebook_stats(&codes, codec.config.codebook_size)
}

/// Optional checkpoints for the encode-side and likelihood statistics.
#[derive(Clone, Debug, Default)]
pub struct EvalModels {
    pub codec: Option<PathBuf>,
    pub dynamics: Option<PathBuf>,
}

/// Builds the report for `pred_dir`. `truth` overrides, by clip name, the
/// ground-truth files recorded at prediction time.
pub fn evaluate(pred_dir: &Path, truth: &[(String, PathBuf)], models: &EvalModels) -> Result<EvalReport> {
    let manifest = PredictManifest::read(pred_dir)?;
    if let Some((name, _)) = truth.iter().find(|(n, _)| !manifest.clips.iter().any(|c| &c.name == n)) {
        return Err(Error::config(format!("no prediction for ground-truth clip {name}")));
    }
    let mut clips = Vec::with_capacity(manifest.clips.len());
    let mut truths = Vec::with_capacity(manifest.clips.len());
    for entry in &manifest.clips {
        let path = truth
            .iter()
            .find(|(n, _)| n == &entry.name)
            .map_or(&entry.source, |(_, p)| p);
        let gt = VideoClip::read(path)?;
        let mut samples = Vec::with_capacity(manifest.samples);
        for s in 0..manifest.samples {
            samples.push(VideoClip::read(&sample_dir(pred_dir, &entry.name, s).join(FRAMES_FILE))?);
        }
        clips.push(score_samples(&entry.name, &samples, &gt, manifest.cond_frames)?);
        truths.push(gt);
    }
    let mut report = EvalReport::new(clips)?;
    report.k = Some(manifest.k);
    report.temperature = Some(manifest.temperature);
    report.provenance = Provenance {
        codec_hash: Some(manifest.codec_hash.clone()),
        dynamics_hash: Some(manifest.dynamics_hash.clone()),
        seed: Some(manifest.seed),
    };
    match (&models.codec, &models.dynamics) {
        (Some(c), Some(d)) => {
            let (codec, model, _, _) = load_pair(c, d)?;
            report.codebook = Some(clip_codebook_stats(&codec, &truths)?);
            report.nats_per_token = Some(nats_per_token(&codec, &model, &truths)?);
        }
        (Some(c), None) => {
            let (codec, _) = super::checkpoint::load_codec(c)?;
            report.codebook = Some(clip_codebook_stats(&codec, &truths)?);
        }
        (None, Some(_)) => return Err(Error::config("likelihood scoring needs the codec as well")),
        (None, None) => {}
    }
    Ok(report)
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::config(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
