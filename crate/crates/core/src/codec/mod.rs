//! Vector-quantized image codec: encoder, codebook, decoder, patch
//! discriminator and their losses.

mod config;
mod discriminator;
mod losses;
mod model;
mod perceptual;
mod quantize;

pub use config::CodecConfig;
pub use discriminator::Discriminator;
pub use losses::{
    adaptive_weight, adaptive_weight_on_tape, discriminator_loss, gan_losses, generator_loss, vqvae_loss, VqLoss,
    LAMBDA_MAX,
};
pub use model::Codec;
pub use perceptual::PerceptualBank;
pub use quantize::{nearest_codes, quantize, CodeGrid, Quantized};
