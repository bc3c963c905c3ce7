//! Minimal dense-network engine: layers with hand-derived reverse-mode
//! gradients, the Adam optimiser, and reparameterised Gaussian draws.

mod adam;
mod gaussian;
mod mlp;
mod rng;

pub use adam::AdamState;
pub use gaussian::sample_gaussian_reparam;
pub use mlp::{Activation, DenseLayer, ForwardCache, LayerGrads, Mlp, MlpGrads};
pub use rng::{stream_id, Rng};
