//! Causal transformer over flattened code sequences, top-k sampling and
//! cached autoregressive rollout.

mod config;
mod model;
pub mod pixel;
mod rollout;
mod sample;
mod tokens;

pub use config::DynamicsConfig;
pub use model::{loss_targets, nll_loss, Transformer};
pub use rollout::{check_pairing, predict_video, KvCache, Rollout};
pub use sample::{sample_topk, top_k_indices, Sampler};
pub use tokens::{flatten_codes, TokenSequence};
