//! Test-time variational EM: infers clean speech from a noisy spectrogram
//! with a trained model, an NMF noise model, and Metropolis-Hastings latent
//! sampling.

mod mh;
mod nmf;
mod target;
mod vem;

pub use mh::{ChainConfig, LatentChain};
pub use nmf::{is_divergence, m_step_nmf, NmfModel, NMF_FLOOR};
pub use target::{log_rz_unnorm, speech_moment, speech_term, LatentTarget};
pub use vem::{
    enhance_spectrogram, enhance_spectrogram_with, enhance_utterance, estimate_speech,
    harmonic_gamma, initial_nmf, update_pi_test, ve_alpha, ve_alpha_samples, ve_s, ve_z_mh,
    Diagnostics, EnhanceConfig, EnhanceOutput, IterationLog, LatentInit, SpeechPosterior,
};
