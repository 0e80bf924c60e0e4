//! Image-to-image translation with a hybrid vision-transformer generator
//! and a conditional PatchGAN discriminator, built from scratch on a
//! reverse-mode autodiff tensor engine.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] — N-d arrays, broadcasting, matmul/conv kernels, and the
//!   gradient tape everything trains through.
//! - [`nn`] — learnable layers: linear, conv, norms, attention,
//!   transformer encoder blocks.
//! - [`generator`] / [`discriminator`] — the two networks.
//! - [`train`] — cGAN + L1 optimization loop, Adam, checkpoints.
//! - [`metrics`] — SSIM, FID over pluggable features, Inception Score.
//! - [`data`] — paired samples, synthetic dataset generation, PNG/PPM IO.
//! - [`cli`] — experiment configs and the `gen-data`/`train`/`infer`/`eval`
//!   commands behind the `vitgan` binary.
//!
//! Start with the runnable examples (`cargo run --example ...`) for a tour.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tape, Tensor};
