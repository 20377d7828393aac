//! Audio-visual transformer fusion model for relative speaker DOA estimation.
//!
//! [`graph`] is a small reverse-mode differentiation tape over dense
//! matrices; [`network`] builds the model on top of it and [`train`] runs
//! separate audio-visual / audio-only training.

pub mod checkpoint;
pub mod graph;
pub mod loss;
pub mod network;
pub mod optim;
pub mod params;
pub mod train;

pub use checkpoint::Checkpoint;
pub use network::{Model, ModelConfig, Route};
pub use optim::{Optimizer, OptimizerConfig};
pub use params::{Mat, ParamId, ParamStore};
pub use train::{Example, TrainConfig, TrainMode, TrainState};
