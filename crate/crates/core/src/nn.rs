//! Parameterised layers shared by the codec, discriminator and transformer.
//! Each layer owns only [`ParamId`]s; values live in a [`ParamSet`] and are
//! bound to a tape per step.

use lvp_tensor::{Float, Tape, Tensor, Var};
use rand::Rng;

use crate::params::{Bound, ParamId, ParamSet};
use crate::Result;

/// He-normal initialisation for a layer with `fan_in` inputs.
fn he<T: Float, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    pub fn new<T: Float, R: Rng>(
        ps: &mut ParamSet<T>,
        name: &str,
        (cin, cout, k): (usize, usize, usize),
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Conv {
        Conv {
            weight: ps.add(format!("{name}.weight"), he(&[cout, cin, k, k], cin * k * k, rng)),
            bias: ps.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride,
            padding,
        }
    }

    pub fn forward<T: Float>(&self, t: &mut Tape<T>, b: &Bound, x: Var) -> Result<Var> {
        Ok(t.conv2d(x, b[self.weight], Some(b[self.bias]), self.stride, self.padding)?)
    }
}

/// Transposed convolution mapping `cin` to `cout` channels; the kernel is
/// stored `[cin, cout, k, k]`, matching the forward convolution it adjoins.
#[derive(Clone, Copy, Debug)]
pub struct ConvTranspose {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose {
    pub fn new<T: Float, R: Rng>(
        ps: &mut ParamSet<T>,
        name: &str,
        (cin, cout, k): (usize, usize, usize),
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> ConvTranspose {
        // each output pixel sees roughly cin·k²/stride² inputs
        let fan_in = (cin * k * k / (stride * stride)).max(1);
        ConvTranspose {
            weight: ps.add(format!("{name}.weight"), he(&[cin, cout, k, k], fan_in, rng)),
            bias: ps.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride,
            padding,
        }
    }

    pub fn forward<T: Float>(&self, t: &mut Tape<T>, b: &Bound, x: Var) -> Result<Var> {
        Ok(t.conv_transpose2d(x, b[self.weight], Some(b[self.bias]), self.stride, self.padding)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// `[fan_in, fan_out]` weight with standard deviation `std`.
    pub fn new<T: Float, R: Rng>(
        ps: &mut ParamSet<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        std: f64,
        rng: &mut R,
    ) -> Linear {
        Linear {
            weight: ps.add(format!("{name}.weight"), Tensor::randn(&[fan_in, fan_out], std, rng)),
            bias: ps.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward<T: Float>(&self, t: &mut Tape<T>, b: &Bound, x: Var) -> Result<Var> {
        let y = t.matmul(x, b[self.weight])?;
        Ok(t.add_bias(y, b[self.bias])?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Float>(ps: &mut ParamSet<T>, name: &str, width: usize) -> LayerNorm {
        LayerNorm {
            gamma: ps.add(format!("{name}.gamma"), Tensor::ones(&[width])),
            beta: ps.add(format!("{name}.beta"), Tensor::zeros(&[width])),
        }
    }

    pub fn forward<T: Float>(&self, t: &mut Tape<T>, b: &Bound, x: Var) -> Result<Var> {
        Ok(t.layer_norm(x, b[self.gamma], b[self.beta])?)
    }
}

/// `x + conv(relu(conv(relu(x))))` with 3×3 kernels at constant width.
#[derive(Clone, Copy, Debug)]
pub struct ResBlock {
    pub first: Conv,
    pub second: Conv,
}

impl ResBlock {
    pub fn new<T: Float, R: Rng>(ps: &mut ParamSet<T>, name: &str, width: usize, rng: &mut R) -> ResBlock {
        ResBlock {
            first: Conv::new(ps, &format!("{name}.0"), (width, width, 3), 1, 1, rng),
            second: Conv::new(ps, &format!("{name}.1"), (width, width, 3), 1, 1, rng),
        }
    }

    pub fn forward<T: Float>(&self, t: &mut Tape<T>, b: &Bound, x: Var) -> Result<Var> {
        let h = t.relu(x);
        let h = self.first.forward(t, b, h)?;
        let h = t.relu(h);
        let h = self.second.forward(t, b, h)?;
        let h = t.scale(h, T::cast(0.5));
        Ok(t.add(x, h)?)
    }
}
