//! Per-clip integer translation, used only when training the dynamics model.

use lvp_tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::VideoClip;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Largest shift magnitude in pixels.
    pub m: usize,
    /// Value written into pixels exposed by the shift.
    pub fill: f32,
    /// Shift along one randomly chosen axis per clip instead of both.
    pub axis_exclusive: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            m: 4,
            fill: 0.0,
            axis_exclusive: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.m >= height.min(width) {
            return Err(Error::config(format!(
                "shift magnitude {} must be below the frame size {}x{}",
                self.m, height, width
            )));
        }
        if !(-1.0..=1.0).contains(&self.fill) {
            return Err(Error::config("fill value must lie in [-1, 1]"));
        }
        Ok(())
    }

    /// Draws one `(dx, dy)` per the configured mode.
    pub fn draw_shift<R: Rng + ?Sized>(&self, rng: &mut R) -> (i32, i32) {
        let m = self.m as i32;
        if self.axis_exclusive {
            let s = rng.random_range(-m..=m);
            if rng.random::<bool>() {
                (s, 0)
            } else {
                (0, s)
            }
        } else {
            (rng.random_range(-m..=m), rng.random_range(-m..=m))
        }
    }
}

/// Shifts every frame by `(dx, dy)`: output pixel `(x, y)` is input pixel
/// `(x − dx, y − dy)`, or `fill` where that lies outside the frame.
pub fn translate(clip: &VideoClip, dx: i32, dy: i32, fill: f32) -> Result<VideoClip> {
    let (t, c, h, w) = (clip.len(), clip.channels(), clip.height(), clip.width());
    if dx == 0 && dy == 0 {
        return Ok(clip.clone());
    }
    let src = clip.frames().data();
    let mut out = vec![fill; src.len()];
    for plane in 0..t * c {
        let base = plane * h * w;
        for y in 0..h as i32 {
            let sy = y - dy;
            if sy < 0 || sy >= h as i32 {
                continue;
            }
            for x in 0..w as i32 {
                let sx = x - dx;
                if sx >= 0 && sx < w as i32 {
                    out[base + y as usize * w + x as usize] = src[base + sy as usize * w + sx as usize];
                }
            }
        }
    }
    clip.with_frames(Tensor::new(&[t, c, h, w], out)?)
}

/// One shift drawn per clip and applied identically to all of its frames.
pub fn translate_clip<R: Rng + ?Sized>(clip: &VideoClip, rng: &mut R, config: &AugmentConfig) -> Result<VideoClip> {
    config.validate(clip.height(), clip.width())?;
    let (dx, dy) = config.draw_shift(rng);
    translate(clip, dx, dy, config.fill)
}
