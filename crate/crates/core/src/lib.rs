//! Sensory optimization engine.
//!
//! Trains a small convolutional recognition net on synthetic, art-free
//! images and then synthesizes images by optimizing them against that net:
//! feature visualization, deep dream, style transfer, their combination, hard
//! medium constraints, and a gradient-free stroke painter.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod net;
pub mod objectives;
pub mod optimize;
pub mod paramspace;
pub mod pnm;
pub mod seeds;
pub mod tensor;

#[cfg(test)]
pub(crate) mod testutil;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use net::{ActivationRecord, LayerSpec, RecognitionNet};
pub use tensor::{Real, Tensor};
