use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Spatial downsampling factor f, a power of two; the code grid is H/f × W/f.
    pub downsample: usize,
    /// Channel width at each resolution, finest first; one more entry than
    /// there are stride-2 stages.
    pub widths: Vec<usize>,
    pub res_blocks: usize,
    /// K, the number of codebook vectors.
    pub codebook_size: usize,
    /// N_z, the width of each codebook vector.
    pub code_dim: usize,
    /// Commitment weight β.
    pub beta: f64,
    /// Stabiliser δ in the adaptive GAN weight.
    pub delta: f64,
    /// Discriminator widths of its three stride-2 stages.
    pub disc_widths: Vec<usize>,
    /// Widths of the fixed random-feature perceptual bank, one per layer.
    pub perceptual_widths: Vec<usize>,
    pub perceptual_seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            height: 32,
            width: 32,
            channels: 3,
            downsample: 4,
            widths: vec![32, 48, 64],
            res_blocks: 1,
            codebook_size: 256,
            code_dim: 16,
            beta: 0.25,
            delta: 1e-6,
            disc_widths: vec![16, 32, 64],
            perceptual_widths: vec![16, 32, 32],
            perceptual_seed: 0x5eed,
        }
    }
}

impl CodecConfig {
    pub fn stages(&self) -> usize {
        self.downsample.trailing_zeros() as usize
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.downsample, self.width / self.downsample)
    }

    pub fn tokens_per_frame(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.downsample;
        if f == 0 || !f.is_power_of_two() {
            return Err(Error::config(format!("downsample factor {f} must be a power of two")));
        }
        if self.height == 0 || self.width == 0 || self.height % f != 0 || self.width % f != 0 {
            return Err(Error::config(format!(
                "frame {}x{} is not divisible by the downsample factor {f}",
                self.height, self.width
            )));
        }
        if self.widths.len() != self.stages() + 1 || self.widths.contains(&0) {
            return Err(Error::config(format!(
                "widths {:?} must have {} positive entries for f = {f}",
                self.widths,
                self.stages() + 1
            )));
        }
        if self.channels == 0 || self.codebook_size == 0 || self.code_dim == 0 {
            return Err(Error::config("channels, codebook size and code width must be positive"));
        }
        if !(self.beta > 0.0) || !(self.delta > 0.0) {
            return Err(Error::config(format!(
                "beta ({}) and delta ({}) must be positive",
                self.beta, self.delta
            )));
        }
        if self.disc_widths.len() != 3 || self.disc_widths.contains(&0) {
            return Err(Error::config("the discriminator needs exactly three positive stage widths"));
        }
        if self.height % 8 != 0 || self.width % 8 != 0 {
            return Err(Error::config("frame size must be divisible by 8 for the discriminator"));
        }
        if self.perceptual_widths.is_empty() || self.perceptual_widths.contains(&0) {
            return Err(Error::config("perceptual bank needs at least one positive width"));
        }
        Ok(())
    }
}
