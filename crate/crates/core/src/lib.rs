//! Recurrent convolutional perceptual-grouping models built from fGRU
//! units, the Pathfinder and cluttered-ABC stimulus generators, a training
//! harness and human–model consistency statistics.

pub mod analysis;
pub mod arch;
pub mod config;
pub mod data;
pub mod error;
pub mod fgru;
pub mod params;
pub mod plot;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
