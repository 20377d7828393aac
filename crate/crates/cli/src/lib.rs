//! Library side of the `egodoa` command: run configuration and the
//! simulate / featurize / train / evaluate / report stages.

pub mod commands;
pub mod config;

use egodoa_core::Error;

pub use config::{Overrides, Preset, RunConfig};

/// Process exit status for an error: 2 configuration, 3 missing or
/// unreadable artifact, 4 numerical failure, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidVelocity(_) | Error::InvalidNoise(_) | Error::Geometry(_) => 2,
        Error::Io { .. } | Error::Format { .. } | Error::Cache(_) => 3,
        Error::Numerical(_) => 4,
        _ => 1,
    }
}
