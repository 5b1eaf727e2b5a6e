//! GLAFF: a timestamp-driven global/local adaptive fusion plugin for time
//! series forecasting, with pluggable backbones, a training/evaluation
//! harness, and anomaly-injection benchmarks.
//!
//! The plugin maps calendar timestamps to observation space with a small
//! transformer encoder, transports those mappings onto each window's scale
//! with median/quantile-range statistics (robust to polluted history), and
//! fuses them with any backbone's local prediction through a learned convex
//! combination.
//!
//! Start with the runnable examples (`cargo run --release --example ...`) or
//! the `glaff` binary (`train`, `evaluate`, `ablate`, `gradcheck`, `synth`,
//! `inject`).

pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub(crate) mod ioutil;
pub mod nn;
pub mod plugin;
pub mod rng;
pub mod tensor;
#[cfg(test)]
mod testutil;
pub mod timefeat;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use plugin::{GlaffConfig, GlaffModel, GlaffPlugin, ModelSpec};
pub use tensor::{set_threads, Gradients, Graph, Tensor};
