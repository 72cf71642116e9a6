//! Training loops, checkpoints, evaluation and frame export.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod ppm;
pub mod predict;
pub mod train_codec;
pub mod train_dynamics;
