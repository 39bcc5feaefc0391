//! Bidirectional rectified-flow transport between images and anchor-colored
//! segmentation masks.
//!
//! One velocity field is trained on paired (image, mask) latents. Integrating
//! it forward segments an image; integrating it backward from a perturbed
//! pseudo mask synthesizes an image. A conditional diffusion baseline is
//! included for comparison.

pub mod anchor;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod dsm;
pub mod error;
pub mod flow;
pub mod grid;
pub mod latent;
pub mod metrics;
pub mod ppm;
pub mod sampler;
pub mod task;
pub mod training;
pub mod velocity;

pub use error::{Error, Result};
