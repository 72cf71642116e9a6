use std::fs;
use std::io::Write;
use std::path::Path;

use lvp_tensor::Tensor;

use crate::{Error, Result};

pub const CLIP_MAGIC: &[u8; 8] = b"HARPCLIP";

/// `T` frames of `N_ch×H×W` pixels in [−1, 1], with optional per-frame actions.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    frames: Tensor<f32>,
    actions: Option<Tensor<f32>>,
    /// Seed the clip was generated from, when known.
    pub seed: Option<u64>,
}

impl VideoClip {
    /// `frames` is `[T, N_ch, H, W]`; `actions`, if given, is `[T, A]`.
    pub fn new(frames: Tensor<f32>, actions: Option<Tensor<f32>>) -> Result<Self> {
        if frames.shape().len() != 4 {
            return Err(Error::config(format!(
                "clip frames must be [T, C, H, W], got {:?}",
                frames.shape()
            )));
        }
        if let Some(a) = &actions {
            if a.shape().len() != 2 || a.shape()[0] != frames.shape()[0] {
                return Err(Error::config(format!(
                    "actions {:?} do not align with {} frames",
                    a.shape(),
                    frames.shape()[0]
                )));
            }
        }
        if frames.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::config("clip pixels must lie in [-1, 1]"));
        }
        Ok(VideoClip {
            frames,
            actions,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    pub fn frame_len(&self) -> usize {
        self.channels() * self.height() * self.width()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.as_ref().map_or(0, |a| a.shape()[1])
    }

    pub fn frames(&self) -> &Tensor<f32> {
        &self.frames
    }

    pub fn actions(&self) -> Option<&Tensor<f32>> {
        self.actions.as_ref()
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames.data()[t * n..(t + 1) * n]
    }

    pub fn action(&self, t: usize) -> Option<&[f32]> {
        self.actions.as_ref().map(|a| {
            let d = a.shape()[1];
            &a.data()[t * d..(t + 1) * d]
        })
    }

    /// Frames `start..end`, with the matching actions.
    pub fn slice(&self, start: usize, end: usize) -> Result<VideoClip> {
        if start >= end || end > self.len() {
            return Err(Error::config(format!(
                "frame range {start}..{end} outside clip of length {}",
                self.len()
            )));
        }
        let n = self.frame_len();
        let frames = Tensor::new(
            &[end - start, self.channels(), self.height(), self.width()],
            self.frames.data()[start * n..end * n].to_vec(),
        )?;
        let actions = match &self.actions {
            Some(a) => {
                let d = a.shape()[1];
                Some(Tensor::new(&[end - start, d], a.data()[start * d..end * d].to_vec())?)
            }
            None => None,
        };
        Ok(VideoClip {
            frames,
            actions,
            seed: self.seed,
        })
    }

    /// Replaces the pixels, keeping actions and provenance.
    pub fn with_frames(&self, frames: Tensor<f32>) -> Result<VideoClip> {
        let mut clip = VideoClip::new(frames, self.actions.clone())?;
        clip.seed = self.seed;
        Ok(clip)
    }

    /// Serialized clip file:
    ///
    /// ```text
    /// magic  "HARPCLIP"
    /// u32×5  T, H, W, N_ch, A        (A = 0 when there are no actions)
    /// f32×T·N_ch·H·W                 frames, T-major then channel, row, column
    /// f32×T·A                        actions
    /// ```
    /// All integers and floats are little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 4 * (self.frames.numel() + self.len() * self.action_dim()));
        out.extend_from_slice(CLIP_MAGIC);
        for d in [self.len(), self.height(), self.width(), self.channels(), self.action_dim()] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.frames.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(a) = &self.actions {
            for v in a.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<VideoClip> {
        let bad = |msg: &str| Error::Format {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        if bytes.len() < 28 || &bytes[..8] != CLIP_MAGIC {
            return Err(bad("missing HARPCLIP header"));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
        let (t, h, w, c, a) = (dim(0), dim(1), dim(2), dim(3), dim(4));
        let n_frames = t * c * h * w;
        let expected = 28 + 4 * (n_frames + t * a);
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let floats: Vec<f32> = bytes[28..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let frames = Tensor::new(&[t, c, h, w], floats[..n_frames].to_vec()).map_err(|e| bad(&e.to_string()))?;
        let actions = if a > 0 {
            Some(Tensor::new(&[t, a], floats[n_frames..].to_vec()).map_err(|e| bad(&e.to_string()))?)
        } else {
            None
        };
        VideoClip::new(frames, actions).map_err(|e| bad(&e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<VideoClip> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        VideoClip::from_bytes(&bytes, path)
    }
}
