use lvp_tensor::{Float, Tape, Var};

use super::Quantized;
use crate::{Error, Result};

/// Upper clamp on the adaptive GAN weight.
pub const LAMBDA_MAX: f64 = 1e4;

#[derive(Clone, Copy, Debug)]
pub struct VqLoss {
    pub total: Var,
    pub recon: Var,
    pub codebook: Var,
    pub commit: Var,
}

/// `recon + codebook + β·commit`, where
/// recon = mean (x − x̂)², codebook = mean (sg[z_e] − e)², commit = mean (sg[e] − z_e)².
///
/// The codebook term reaches only the codebook, the commitment term only the
/// encoder, and the reconstruction term reaches the encoder through the
/// straight-through rows.
pub fn vqvae_loss<T: Float>(tape: &mut Tape<T>, x: Var, x_hat: Var, q: &Quantized, beta: f64) -> Result<VqLoss> {
    let recon = tape.mse(x, x_hat)?;
    let ze = tape.stop_gradient(q.z_e_rows);
    let codebook = tape.mse(ze, q.e_rows)?;
    let e = tape.stop_gradient(q.e_rows);
    let commit_raw = tape.mse(e, q.z_e_rows)?;
    let commit = tape.scale(commit_raw, T::cast(beta));
    let partial = tape.add(recon, codebook)?;
    let total = tape.add(partial, commit)?;
    Ok(VqLoss {
        total,
        recon,
        codebook,
        commit,
    })
}

/// `−mean[log σ(D(x))] − mean[log(1 − σ(D(x̂)))]`, via `−log σ(l) = softplus(−l)`.
pub fn discriminator_loss<T: Float>(tape: &mut Tape<T>, real_logits: Var, fake_logits: Var) -> Result<Var> {
    let neg = tape.scale(real_logits, -T::one());
    let sp_real = tape.softplus(neg);
    let real = tape.mean(sp_real);
    let sp_fake = tape.softplus(fake_logits);
    let fake = tape.mean(sp_fake);
    Ok(tape.add(real, fake)?)
}

/// Non-saturating generator term `−mean[log σ(D(x̂))]`.
pub fn generator_loss<T: Float>(tape: &mut Tape<T>, fake_logits: Var) -> Var {
    let neg = tape.scale(fake_logits, -T::one());
    let sp = tape.softplus(neg);
    tape.mean(sp)
}

/// `(d_loss, g_loss)` for one pair of logit grids.
pub fn gan_losses<T: Float>(tape: &mut Tape<T>, real_logits: Var, fake_logits: Var) -> Result<(Var, Var)> {
    let d = discriminator_loss(tape, real_logits, fake_logits)?;
    let g = generator_loss(tape, fake_logits);
    Ok((d, g))
}

/// `λ = ‖∇perc‖ / (‖∇gan‖ + δ)`, clamped to `[0, 1e4]`.
pub fn adaptive_weight<T: Float>(grad_perc: &[T], grad_gan: &[T], delta: f64) -> Result<f64> {
    let norm = |g: &[T]| g.iter().map(|v| v.widen() * v.widen()).sum::<f64>().sqrt();
    let (p, g) = (norm(grad_perc), norm(grad_gan));
    if !p.is_finite() || !g.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient norm in adaptive weight (perceptual {p}, gan {g})"
        )));
    }
    let lambda = p / (g + delta);
    Ok(if lambda.is_nan() { 0.0 } else { lambda.clamp(0.0, LAMBDA_MAX) })
}

/// Evaluates [`adaptive_weight`] from two separate backward passes of
/// `perc` and `gan` to the parameter `last`. Tape gradients are zeroed
/// before returning.
pub fn adaptive_weight_on_tape<T: Float>(
    tape: &mut Tape<T>,
    perc: Var,
    gan: Var,
    last: Var,
    delta: f64,
) -> Result<f64> {
    tape.zero_grad();
    tape.backward(perc)?;
    let gp = tape.grad_tensor(last);
    tape.zero_grad();
    tape.backward(gan)?;
    let gg = tape.grad_tensor(last);
    tape.zero_grad();
    adaptive_weight(gp.data(), gg.data(), delta)
}

#[cfg(test)]
mod tests {
    use lvp_tensor::Tensor;

    use super::*;

    #[test]
    fn zero_logits_give_log_two() {
        let mut tape = Tape::<f64>::new();
        let r = tape.constant(Tensor::zeros(&[2, 1, 4, 4]));
        let f = tape.constant(Tensor::zeros(&[2, 1, 4, 4]));
        let (d, g) = gan_losses(&mut tape, r, f).unwrap();
        assert!((tape.value(d).item() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((tape.value(g).item() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_discriminator_has_vanishing_loss() {
        let mut tape = Tape::<f64>::new();
        let r = tape.constant(Tensor::full(&[1, 1, 2, 2], 40.0));
        let f = tape.constant(Tensor::full(&[1, 1, 2, 2], -40.0));
        let (d, _) = gan_losses(&mut tape, r, f).unwrap();
        assert!(tape.value(d).item() < 1e-16);
    }

    #[test]
    fn equal_gradients_give_unit_weight() {
        let g = [0.3f64, -1.2, 0.5];
        let l = adaptive_weight(&g, &g, 1e-6).unwrap();
        assert!((l - 1.0).abs() < 1e-5);
    }

    #[test]
    fn vanishing_gan_gradient_hits_the_clamp() {
        let l = adaptive_weight(&[1.0f64, 0.0], &[0.0, 0.0], 1e-6).unwrap();
        assert_eq!(l, LAMBDA_MAX);
    }

    #[test]
    fn non_finite_gradient_is_numeric_error() {
        let err = adaptive_weight(&[f64::NAN], &[1.0], 1e-6).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
