//! Autoregressive latent video prediction: a vector-quantized frame codec,
//! a causal transformer over its discrete codes, and the tooling to train,
//! sample and evaluate both on synthetic sprite videos.

pub mod augment;
pub mod codec;
pub mod data;
pub mod dynamics;
mod error;
pub mod harness;
pub mod nn;
pub mod params;

pub use error::{Error, Result};
