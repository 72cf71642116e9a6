use lvp_tensor::{Float, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::CodecConfig;
use crate::nn::Conv;
use crate::params::{Bound, ParamSet};
use crate::{Error, Result};

const SLOPE: f64 = 0.2;

/// Patch discriminator: three 4×4 stride-2 convolutions with leaky relu,
/// then a 1×1 head producing one logit per receptive patch.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub params: ParamSet<f32>,
    stages: Vec<Conv>,
    head: Conv,
    input: (usize, usize, usize),
}

impl Discriminator {
    pub fn new(config: &CodecConfig, seed: u64) -> Result<Discriminator> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut cin = config.channels;
        let stages = config
            .disc_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let c = Conv::new(&mut params, &format!("disc.stage{i}"), (cin, w, 4), 2, 1, &mut rng);
                cin = w;
                c
            })
            .collect();
        let head = Conv::new(&mut params, "disc.head", (cin, 1, 1), 1, 0, &mut rng);
        Ok(Discriminator {
            params,
            stages,
            head,
            input: (config.channels, config.height, config.width),
        })
    }

    pub fn logit_grid(&self) -> (usize, usize) {
        (self.input.1 / 8, self.input.2 / 8)
    }

    /// Logits `[B, 1, H/8, W/8]` for images `x: [B, C, H, W]`.
    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, b: &Bound, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 4 || (s[1], s[2], s[3]) != self.input {
            return Err(Error::config(format!(
                "discriminator expects [B, {}, {}, {}], got {s:?}",
                self.input.0, self.input.1, self.input.2
            )));
        }
        let mut h = x;
        for stage in &self.stages {
            let c = stage.forward(tape, b, h)?;
            h = tape.leaky_relu(c, T::cast(SLOPE));
        }
        self.head.forward(tape, b, h)
    }

    /// Logits for a batch without recording gradients.
    pub fn eval(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &b, xv)?;
        Ok(tape.value(y).clone())
    }
}
