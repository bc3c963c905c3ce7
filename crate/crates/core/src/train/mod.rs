//! Variational training: ELBO and MIN-VAE losses with analytic gradients,
//! responsibilities, input augmentation, and the epoch loops.

mod augment;
mod kl;
mod loss;
mod run;

pub use augment::{augment_audio_input, Augmented, NoiseInjection};
pub use kl::{kl_bernoulli, kl_diagonal, kl_gaussians};
pub use loss::{
    branch_costs, draw_noise, elbo_standard, elbo_standard_batch, elbo_standard_with_noise,
    j_tilde, minvae_loss, minvae_loss_with_noise, update_pi, update_responsibility, FrameBatch,
    LossOutput, Posterior,
};
pub(crate) use loss::{elbo_split_passes, minvae_split_passes, sigmoid};
pub use run::{
    compute_responsibilities, evaluate_standard_loss, init_from_pretrained, train, train_minvae,
    train_standard, train_v3, EpochLog, TrainConfig, TrainError, TrainOutput, TrainState,
    TrainingLog, TrainingSet,
};
