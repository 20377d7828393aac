//! Egocentric audio-visual speaker localization toolkit: scene simulation,
//! GCC-PHAT and patch features, SRP-PHAT baseline, and evaluation metrics.

pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod io;
pub mod seed;
pub mod simulator;

pub use error::{Error, Result};
