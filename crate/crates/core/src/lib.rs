//! Mixture-of-inference-networks VAE (MIN-VAE) speech models and the
//! variational-EM speech enhancer built on top of them.
//!
//! The crate is organised bottom-up:
//!
//! * [`dsp`]: STFT analysis/synthesis and power features.
//! * [`nn`]: a small dense-network engine with hand-written gradients, Adam,
//!   and reparameterised Gaussian sampling.
//! * [`model`]: the A-VAE, V-VAE, AV-VAE and MIN-VAE bundles and their
//!   densities.
//! * [`train`]: ELBO losses, responsibilities, and the training loops.
//! * [`enhance`]: test-time variational EM with an NMF noise model and
//!   Metropolis-Hastings latent sampling.
//! * [`data`]: synthetic corpora, SNR mixing, SI-SDR scoring.
//! * [`io`]: checkpoints, array files, and WAV.
//! * [`gradcheck`]: finite-difference verification harness.

pub mod data;
pub mod dsp;
pub mod enhance;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
pub use model::{MinVae, MixturePriorParams, ModelDims, Variant};
pub use nn::Rng;

/// Lower bound applied to every variance the models produce.
pub const VARIANCE_FLOOR: f64 = 1e-6;
