use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub layers: usize,
    pub heads: usize,
    /// Model width d.
    pub width: usize,
    /// Vocabulary size, equal to the codec's K.
    pub vocab: usize,
    /// Longest token sequence the model accepts.
    pub context: usize,
    /// Conditioning frames c.
    pub cond_frames: usize,
    /// Frames per training clip; the frame-position table has this many rows.
    pub frames: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    /// Per-frame action width; 0 disables action conditioning.
    pub action_dim: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            layers: 12,
            heads: 4,
            width: 64,
            vocab: 256,
            context: 2048,
            cond_frames: 2,
            frames: 12,
            grid_height: 8,
            grid_width: 8,
            action_dim: 2,
        }
    }
}

impl DynamicsConfig {
    pub fn tokens_per_frame(&self) -> usize {
        self.grid_height * self.grid_width
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::config(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if self.vocab == 0 || self.tokens_per_frame() == 0 {
            return Err(Error::config("vocabulary and code grid must be non-empty"));
        }
        if self.cond_frames == 0 || self.cond_frames >= self.frames {
            return Err(Error::config(format!(
                "conditioning frames {} must be in [1, {})",
                self.cond_frames, self.frames
            )));
        }
        let needed = self.frames * self.tokens_per_frame();
        if self.context < needed {
            return Err(Error::config(format!(
                "context {} is shorter than a full clip of {needed} tokens",
                self.context
            )));
        }
        Ok(())
    }
}
