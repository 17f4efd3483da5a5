//! Matting-based dual-GAN text image super-resolution.
//!
//! The pipeline decomposes a low-resolution text image into foreground,
//! background and alpha (text boundary) layers, super-resolves the color and
//! boundary layers with two adversarially trained branches, recomposes the
//! result via `I = alpha * F + (1 - alpha) * B`, and refines the branches
//! with a character classification loss. Everything runs on the CPU on top of
//! a small reverse-mode autodiff core.

pub mod error;
pub mod evalsuite;
pub mod gradsuite;
pub mod imaging;
pub mod matting;
pub mod metrics;
pub mod model;
pub mod tensorgrad;
pub mod textgen;
pub mod trainer;
pub(crate) mod util;

pub use error::{Error, Result};
pub use tensorgrad::{Elem, Tensor};
