//! Catalogue of per-kernel gradient checks.
//!
//! Each case draws small random inputs from a seed and reduces the kernel's
//! output to a scalar with fixed, non-uniform weights, so every output
//! element contributes a distinct amount to the checked gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_gradients, DEFAULT_STEP};
use crate::{Result, Tape, Tensor, Var};

pub type Inputs = fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>;
pub type Build = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

pub struct KernelCase {
    pub name: &'static str,
    pub inputs: Inputs,
    pub build: Build,
}

impl KernelCase {
    /// Relative error of each input's gradient for one seed.
    pub fn run(&self, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = (self.inputs)(&mut rng);
        check_gradients(&inputs, self.build, DEFAULT_STEP)
    }

    /// Worst relative error over `seeds` consecutive seeds starting at 0.
    pub fn worst(&self, seeds: u64) -> Result<f64> {
        let mut worst = 0.0f64;
        for s in 0..seeds {
            for e in self.run(s)? {
                worst = worst.max(e);
            }
        }
        Ok(worst)
    }
}

/// `Σ wᵢ·xᵢ` with deterministic weights `wᵢ = cos(1.7 i + 0.3)`.
pub fn weighted_sum(tape: &mut Tape<f64>, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let n = tape.value(x).numel();
    let w: Vec<f64> = (0..n).map(|i| (1.7 * i as f64 + 0.3).cos()).collect();
    let w = tape.constant(Tensor::new(&shape, w)?);
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Gaussian samples pushed at least `gap` away from zero, for kinked ops.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    randn(rng, shape).map(|v| if v >= 0.0 { v + gap } else { v - gap })
}

pub fn kernel_cases() -> Vec<KernelCase> {
    vec![
        KernelCase {
            name: "add",
            inputs: |r| vec![randn(r, &[3, 4]), randn(r, &[3, 4])],
            build: |t, v| {
                let y = t.add(v[0], v[1])?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "sub",
            inputs: |r| vec![randn(r, &[3, 4]), randn(r, &[3, 4])],
            build: |t, v| {
                let y = t.sub(v[0], v[1])?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "mul",
            inputs: |r| vec![randn(r, &[3, 4]), randn(r, &[3, 4])],
            build: |t, v| {
                let y = t.mul(v[0], v[1])?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "scale",
            inputs: |r| vec![randn(r, &[5])],
            build: |t, v| {
                let y = t.scale(v[0], -2.5);
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "add_bias",
            inputs: |r| vec![randn(r, &[3, 4]), randn(r, &[4])],
            build: |t, v| {
                let y = t.add_bias(v[0], v[1])?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "matmul",
            inputs: |r| vec![randn(r, &[5, 4]), randn(r, &[4, 3])],
            build: |t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "bmm",
            inputs: |r| vec![randn(r, &[2, 3, 4]), randn(r, &[2, 4, 5])],
            build: |t, v| {
                let y = t.bmm(v[0], v[1], false, false)?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "bmm_transposed",
            inputs: |r| vec![randn(r, &[2, 4, 3]), randn(r, &[2, 5, 4])],
            build: |t, v| {
                let y = t.bmm(v[0], v[1], true, true)?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "bmm_nt",
            inputs: |r| vec![randn(r, &[2, 3, 4]), randn(r, &[2, 5, 4])],
            build: |t, v| {
                let y = t.bmm(v[0], v[1], false, true)?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "conv2d",
            inputs: |r| vec![randn(r, &[2, 3, 8, 8]), randn(r, &[4, 3, 3, 3]), randn(r, &[4])],
            build: |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "conv2d_strided",
            inputs: |r| vec![randn(r, &[2, 3, 8, 8]), randn(r, &[2, 3, 4, 4])],
            build: |t, v| {
                let y = t.conv2d(v[0], v[1], None, 2, 1)?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "conv_transpose2d",
            inputs: |r| vec![randn(r, &[2, 3, 4, 4]), randn(r, &[3, 2, 4, 4]), randn(r, &[2])],
            build: |t, v| {
                let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "relu",
            inputs: |r| vec![away_from_zero(r, &[4, 5], 0.05)],
            build: |t, v| {
                let y = t.relu(v[0]);
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "leaky_relu",
            inputs: |r| vec![away_from_zero(r, &[4, 5], 0.05)],
            build: |t, v| {
                let y = t.leaky_relu(v[0], 0.2);
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "gelu",
            inputs: |r| vec![randn(r, &[4, 5])],
            build: |t, v| {
                let y = t.gelu(v[0]);
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "tanh",
            inputs: |r| vec![randn(r, &[4, 5])],
            build: |t, v| {
                let y = t.tanh(v[0]);
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "softplus",
            inputs: |r| vec![randn(r, &[4, 5]).map(|v| 3.0 * v)],
            build: |t, v| {
                let y = t.softplus(v[0]);
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "layer_norm",
            inputs: |r| vec![randn(r, &[3, 6]), randn(r, &[6]), randn(r, &[6])],
            build: |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2])?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "gather_rows",
            inputs: |r| vec![randn(r, &[6, 3])],
            build: |t, v| {
                let y = t.gather_rows(v[0], &[4, 1, 4, 0, 5])?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "reshape",
            inputs: |r| vec![randn(r, &[2, 6])],
            build: |t, v| {
                let y = t.reshape(v[0], &[3, 4])?;
                let y = t.mul(y, y)?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "permute",
            inputs: |r| vec![randn(r, &[2, 3, 4])],
            build: |t, v| {
                let y = t.permute(v[0], &[2, 0, 1])?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "sum",
            inputs: |r| vec![randn(r, &[3, 4])],
            build: |t, v| {
                let y = t.mul(v[0], v[0])?;
                Ok(t.sum(y))
            },
        },
        KernelCase {
            name: "mean",
            inputs: |r| vec![randn(r, &[3, 4])],
            build: |t, v| {
                let y = t.mul(v[0], v[0])?;
                Ok(t.mean(y))
            },
        },
        KernelCase {
            name: "softmax",
            inputs: |r| vec![randn(r, &[2, 4, 3])],
            build: |t, v| {
                let y = t.softmax(v[0], 1)?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "masked_softmax",
            inputs: |r| vec![randn(r, &[2, 4, 4])],
            build: |t, v| {
                let m = t.causal_mask(v[0])?;
                let y = t.softmax(m, 2)?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "causal_softmax",
            inputs: |r| vec![randn(r, &[2, 5, 5])],
            build: |t, v| {
                let y = t.causal_softmax(v[0], 0.7)?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "cross_entropy",
            inputs: |r| vec![randn(r, &[5, 7])],
            build: |t, v| t.cross_entropy(v[0], &[3, 0, 6, 6, 1]),
        },
        KernelCase {
            name: "l2_normalize",
            inputs: |r| vec![randn(r, &[4, 5])],
            build: |t, v| {
                let y = t.l2_normalize(v[0], 1e-10)?;
                weighted_sum(t, y)
            },
        },
        KernelCase {
            name: "straight_through",
            inputs: |r| vec![randn(r, &[3, 4]), randn(r, &[3, 4])],
            build: |t, v| {
                // forward takes the detached copy, backward must reach v[1]
                let value = t.stop_gradient(v[1]);
                let y = t.straight_through(value, v[1])?;
                let y = t.mul(y, v[0])?;
                weighted_sum(t, y)
            },
        },
    ]
}

/// A conv → relu → matmul → cross-entropy graph, the composite from the
/// backward contract. Inputs: image, kernel, projection.
pub fn composite_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![
        randn(rng, &[2, 2, 6, 6]),
        randn(rng, &[3, 2, 3, 3]),
        randn(rng, &[3 * 4 * 4, 5]).map(|v| v * 0.2),
    ]
}

pub fn composite_build(t: &mut Tape<f64>, v: &[Var]) -> Result<Var> {
    let c = t.conv2d(v[0], v[1], None, 1, 0)?;
    let a = t.relu(c);
    let flat = t.reshape(a, &[2, 3 * 4 * 4])?;
    let logits = t.matmul(flat, v[2])?;
    t.cross_entropy(logits, &[1, 4])
}

/// Smallest |pre-activation| of the composite's relu, used to reject
/// inputs where the finite-difference stencil would straddle the kink.
pub fn composite_kink_gap(inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut t = Tape::new();
    let x = t.constant(inputs[0].clone());
    let k = t.constant(inputs[1].clone());
    let c = t.conv2d(x, k, None, 1, 0)?;
    Ok(t.value(c).data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs())))
}
