//! Training, attribution and robustness evaluation for small volumetric CNNs.
//!
//! The pipeline trains the same classifier several times from different
//! seeds, computes heatmaps with gradient*input, guided backpropagation,
//! epsilon-LRP and occlusion, and measures how consistent each method is
//! across repetitions.

pub mod atlas;
pub mod attribution;
pub mod data;
pub mod error;
pub mod io;
pub mod nn;
pub mod phantom;
pub mod robustness;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
