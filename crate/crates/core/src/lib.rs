//! Multi-focus image fusion with a GAN-estimated focus map.
//!
//! The crate covers the whole loop: alpha-matte training data synthesis,
//! generator/critic training with a gradient-penalized Wasserstein objective,
//! focus-map refinement and compositing, and a twelve-metric quality battery.

pub mod autograd;
pub mod error;
pub mod experiments;
pub mod fusion;
pub mod metrics;
pub mod network;
pub mod raster;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use raster::{FocusMap, Image, SoftMap};
