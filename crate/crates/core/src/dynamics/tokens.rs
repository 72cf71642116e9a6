use std::ops::Range;

use lvp_tensor::Tensor;

use crate::codec::CodeGrid;
use crate::{Error, Result};

/// Raster-flattened codes of a clip, frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub codes: Vec<usize>,
    pub frame_index: Vec<usize>,
    pub spatial_index: Vec<usize>,
    pub tokens_per_frame: usize,
    /// Leading frames that are context only.
    pub cond_frames: usize,
    /// One action vector per frame, when present.
    pub actions: Option<Vec<Vec<f32>>>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.codes.len() / self.tokens_per_frame
    }

    /// Positions whose code is a prediction target: every token of the
    /// future frames.
    pub fn target_positions(&self) -> Range<usize> {
        self.cond_frames * self.tokens_per_frame..self.len()
    }

    /// N_d = (T − c)·H′·W′.
    pub fn n_targets(&self) -> usize {
        self.target_positions().len()
    }

    /// Logit rows scored by the loss: row `i` predicts token `i + 1`, so
    /// these are the targets shifted back by one.
    pub fn loss_rows(&self) -> Range<usize> {
        let r = self.target_positions();
        r.start - 1..r.end - 1
    }
}

/// Flattens per-frame grids in raster order, frame by frame. `actions`, if
/// given, is `[T, A]` and aligned one row per grid.
pub fn flatten_codes(grids: &[CodeGrid], cond_frames: usize, actions: Option<&Tensor<f32>>) -> Result<TokenSequence> {
    let first = grids.first().ok_or_else(|| Error::config("no code grids to flatten"))?;
    let (h, w) = (first.height, first.width);
    if let Some(g) = grids.iter().find(|g| (g.height, g.width) != (h, w)) {
        return Err(Error::config(format!(
            "code grids disagree in size: {h}x{w} vs {}x{}",
            g.height, g.width
        )));
    }
    if cond_frames == 0 || cond_frames > grids.len() {
        return Err(Error::config(format!(
            "conditioning frames {cond_frames} must be in [1, {}]",
            grids.len()
        )));
    }
    let s = h * w;
    let mut seq = TokenSequence {
        codes: Vec::with_capacity(grids.len() * s),
        frame_index: Vec::with_capacity(grids.len() * s),
        spatial_index: Vec::with_capacity(grids.len() * s),
        tokens_per_frame: s,
        cond_frames,
        actions: None,
    };
    for (t, g) in grids.iter().enumerate() {
        seq.codes.extend_from_slice(&g.codes);
        seq.frame_index.extend(std::iter::repeat_n(t, s));
        seq.spatial_index.extend(0..s);
    }
    if let Some(a) = actions {
        if a.shape().len() != 2 || a.shape()[0] != grids.len() {
            return Err(Error::config(format!(
                "actions {:?} do not align with {} frames",
                a.shape(),
                grids.len()
            )));
        }
        seq.actions = Some(a.data().chunks(a.shape()[1]).map(<[f32]>::to_vec).collect());
    }
    Ok(seq)
}
