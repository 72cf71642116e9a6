//! Moving-sprite worlds with integer positions, so every future frame is
//! exactly computable from the seed (and actions).

use lvp_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VideoClip;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Physics {
    /// Constant velocity, reflecting at the canvas walls.
    Bounce,
    /// Sprite 0 is displaced by the per-step action, clamped to the canvas;
    /// the remaining sprites bounce.
    ActionDriven,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpriteWorldConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frames: usize,
    pub context: usize,
    pub sprites: usize,
    pub sprite_size: usize,
    /// Sprite colours in [−1, 1], one entry per channel; sprite `i` uses
    /// `palette[i % palette.len()]`.
    pub palette: Vec<Vec<f32>>,
    pub background: f32,
    pub physics: Physics,
    /// Largest per-axis speed of bouncing sprites.
    pub max_speed: i32,
    /// Largest per-axis action magnitude in action-driven mode.
    pub max_action: i32,
}

impl Default for SpriteWorldConfig {
    fn default() -> Self {
        SpriteWorldConfig {
            height: 32,
            width: 32,
            channels: 3,
            frames: 12,
            context: 2,
            sprites: 3,
            sprite_size: 6,
            palette: vec![
                vec![1.0, -0.2, -0.6],
                vec![-0.6, 1.0, -0.2],
                vec![-0.2, -0.6, 1.0],
                vec![1.0, 1.0, -0.6],
            ],
            background: -1.0,
            physics: Physics::ActionDriven,
            max_speed: 0,
            max_action: 2,
        }
    }
}

impl SpriteWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self;
        if c.height == 0 || c.width == 0 || c.channels == 0 || c.frames == 0 {
            return Err(Error::config("canvas and clip length must be positive"));
        }
        if c.sprite_size == 0 || c.sprite_size > c.height || c.sprite_size > c.width {
            return Err(Error::config(format!(
                "sprite size {} does not fit a {}x{} canvas",
                c.sprite_size, c.height, c.width
            )));
        }
        if c.context == 0 || c.context >= c.frames {
            return Err(Error::config(format!(
                "context {} must be in [1, {})",
                c.context, c.frames
            )));
        }
        if c.sprites == 0 || c.palette.is_empty() {
            return Err(Error::config("need at least one sprite and one colour"));
        }
        if c.palette.iter().any(|p| p.len() != c.channels) {
            return Err(Error::config(format!("palette entries must have {} channels", c.channels)));
        }
        let colours = c.palette.iter().flatten().chain([&c.background]);
        if colours.into_iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::config("palette and background must lie in [-1, 1]"));
        }
        let room = (c.height.min(c.width) - c.sprite_size) as i32;
        if c.max_speed < 0 || c.max_action < 0 || c.max_speed > room.max(0) {
            return Err(Error::config(format!(
                "max_speed must be in [0, {room}] and max_action non-negative"
            )));
        }
        Ok(())
    }

    pub fn action_dim(&self) -> usize {
        match self.physics {
            Physics::Bounce => 0,
            Physics::ActionDriven => 2,
        }
    }
}

/// One axis of reflecting motion on `[0, limit]`. Speeds never exceed the
/// limit, so a single reflection per step suffices.
pub fn bounce_step(pos: i32, vel: i32, limit: i32) -> (i32, i32) {
    let next = pos + vel;
    if next < 0 {
        (-next, -vel)
    } else if next > limit {
        (2 * limit - next, -vel)
    } else {
        (next, vel)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpriteState {
    pub x: i32,
    pub y: i32,
    pub vx: i32,
    pub vy: i32,
}

/// Sprite states for every frame plus the action sequence, before rendering.
pub struct Trajectory {
    pub states: Vec<Vec<SpriteState>>,
    pub actions: Option<Vec<[i32; 2]>>,
}

pub fn simulate(config: &SpriteWorldConfig, seed: u64) -> Result<Trajectory> {
    simulate_with_actions(config, seed, None)
}

/// As [`simulate`], but with a caller-chosen action sequence for the agent.
/// Initial positions and distractor velocities still come from `seed`.
pub fn simulate_with_actions(
    config: &SpriteWorldConfig,
    seed: u64,
    forced: Option<&[[i32; 2]]>,
) -> Result<Trajectory> {
    config.validate()?;
    if let Some(f) = forced {
        if config.physics != Physics::ActionDriven || f.len() != config.frames {
            return Err(Error::config(format!(
                "forced actions need action-driven physics and {} steps",
                config.frames
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lim_x = (config.width - config.sprite_size) as i32;
    let lim_y = (config.height - config.sprite_size) as i32;
    let s = config.max_speed;
    let mut state: Vec<SpriteState> = (0..config.sprites)
        .map(|_| SpriteState {
            x: rng.random_range(0..=lim_x),
            y: rng.random_range(0..=lim_y),
            vx: rng.random_range(-s..=s),
            vy: rng.random_range(-s..=s),
        })
        .collect();
    let actions: Option<Vec<[i32; 2]>> = match config.physics {
        Physics::Bounce => None,
        Physics::ActionDriven => {
            let a = config.max_action;
            let drawn: Vec<[i32; 2]> =
                (0..config.frames).map(|_| [rng.random_range(-a..=a), rng.random_range(-a..=a)]).collect();
            Some(forced.map_or(drawn, <[_]>::to_vec))
        }
    };
    let mut states = vec![state.clone()];
    for t in 1..config.frames {
        for (i, sp) in state.iter_mut().enumerate() {
            match (&actions, i) {
                (Some(acts), 0) => {
                    let [dx, dy] = acts[t - 1];
                    sp.x = (sp.x + dx).clamp(0, lim_x);
                    sp.y = (sp.y + dy).clamp(0, lim_y);
                }
                _ => {
                    (sp.x, sp.vx) = bounce_step(sp.x, sp.vx, lim_x);
                    (sp.y, sp.vy) = bounce_step(sp.y, sp.vy, lim_y);
                }
            }
        }
        states.push(state.clone());
    }
    Ok(Trajectory { states, actions })
}

/// Draws sprites over the background in reverse index order, so sprite 0
/// (the agent in action-driven mode) is never occluded.
pub fn render(config: &SpriteWorldConfig, sprites: &[SpriteState]) -> Vec<f32> {
    let (h, w, c) = (config.height, config.width, config.channels);
    let mut frame = vec![config.background; c * h * w];
    for (i, sp) in sprites.iter().enumerate().rev() {
        let colour = &config.palette[i % config.palette.len()];
        for ch in 0..c {
            for y in sp.y as usize..sp.y as usize + config.sprite_size {
                for x in sp.x as usize..sp.x as usize + config.sprite_size {
                    frame[(ch * h + y) * w + x] = colour[ch];
                }
            }
        }
    }
    frame
}

/// Bit-reproducible clip for `(config, seed)`.
///
/// In action-driven mode, action `t` moves the agent between frames `t` and
/// `t + 1`; the last action is drawn but has no visible effect.
pub fn generate_clip(config: &SpriteWorldConfig, seed: u64) -> Result<VideoClip> {
    clip_from(config, seed, simulate(config, seed)?)
}

pub fn generate_clip_with_actions(config: &SpriteWorldConfig, seed: u64, actions: &[[i32; 2]]) -> Result<VideoClip> {
    clip_from(config, seed, simulate_with_actions(config, seed, Some(actions))?)
}

fn clip_from(config: &SpriteWorldConfig, seed: u64, traj: Trajectory) -> Result<VideoClip> {
    let mut data = Vec::with_capacity(config.frames * config.channels * config.height * config.width);
    for s in &traj.states {
        data.extend(render(config, s));
    }
    let frames = Tensor::new(&[config.frames, config.channels, config.height, config.width], data)?;
    let actions = match traj.actions {
        Some(a) => Some(Tensor::new(
            &[config.frames, 2],
            a.iter().flat_map(|v| v.map(|x| x as f32)).collect(),
        )?),
        None => None,
    };
    let mut clip = VideoClip::new(frames, actions)?;
    clip.seed = Some(seed);
    Ok(clip)
}
