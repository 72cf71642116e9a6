//! Feature-space distance from a fixed stack of random convolutions.
//!
//! The first layer is a 3×3 convolution at stride 1, later layers are 4×4
//! at stride 2; each is followed by a leaky relu. Activations are
//! unit-normalised over channels at every location; the distance is the mean
//! squared difference of the normalised maps, summed over layers.

use lvp_tensor::{Float, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::Result;

const SLOPE: f64 = 0.2;
const EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualBank {
    kernels: Vec<Tensor<f64>>,
}

impl PerceptualBank {
    /// Kernels drawn from `seed`; the same seed always yields the same bank.
    pub fn new(in_channels: usize, widths: &[usize], seed: u64) -> PerceptualBank {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = in_channels;
        let kernels = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let ks = if i == 0 { 3 } else { 4 };
                let k = Tensor::randn(&[w, cin, ks, ks], (2.0 / (ks * ks * cin) as f64).sqrt(), &mut rng);
                cin = w;
                k
            })
            .collect();
        PerceptualBank { kernels }
    }

    pub fn layers(&self) -> usize {
        self.kernels.len()
    }

    fn features<T: Float>(&self, tape: &mut Tape<T>, kernels: &[Var], x: Var) -> Result<Vec<Var>> {
        let mut h = x;
        let mut out = Vec::with_capacity(kernels.len());
        for (i, &k) in kernels.iter().enumerate() {
            let c = tape.conv2d(h, k, None, if i == 0 { 1 } else { 2 }, 1)?;
            h = tape.leaky_relu(c, T::cast(SLOPE));
            let channels_last = tape.permute(h, &[0, 2, 3, 1])?;
            out.push(tape.l2_normalize(channels_last, T::cast(EPS))?);
        }
        Ok(out)
    }

    /// Distance between image batches `x` and `y`, both `[B, C, H, W]`.
    pub fn distance<T: Float>(&self, tape: &mut Tape<T>, x: Var, y: Var) -> Result<Var> {
        let kernels: Vec<Var> = self.kernels.iter().map(|k| tape.constant(k.cast())).collect();
        let fx = self.features(tape, &kernels, x)?;
        let fy = self.features(tape, &kernels, y)?;
        let mut total: Option<Var> = None;
        for (a, b) in fx.into_iter().zip(fy) {
            let d = tape.mse(a, b)?;
            total = Some(match total {
                Some(t) => tape.add(t, d)?,
                None => d,
            });
        }
        Ok(total.expect("bank has at least one layer"))
    }

    /// Convenience evaluation outside any training graph.
    pub fn eval(&self, x: &Tensor<f32>, y: &Tensor<f32>) -> Result<f64> {
        let mut tape = Tape::<f32>::new();
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let d = self.distance(&mut tape, xv, yv)?;
        Ok(tape.value(d).item() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_are_at_distance_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::uniform(&[2, 3, 16, 16], -1.0, 1.0, &mut rng);
        let bank = PerceptualBank::new(3, &[8, 8, 8], 1);
        assert_eq!(bank.eval(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn distance_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f32>::uniform(&[1, 3, 16, 16], -1.0, 1.0, &mut rng);
        let y = Tensor::<f32>::uniform(&[1, 3, 16, 16], -1.0, 1.0, &mut rng);
        let bank = PerceptualBank::new(3, &[8, 8, 8], 1);
        assert_eq!(bank.eval(&x, &y).unwrap(), bank.eval(&y, &x).unwrap());
    }
}
