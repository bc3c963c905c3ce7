//! Synthetic corpora with known ground truth, SNR-controlled mixing, and
//! SI-SDR scoring.

mod eval;
mod metrics;
mod toy;

pub use eval::{
    evaluate, make_mixtures, Bypass, Enhancer, Mixture, OracleWiener, ScoreReport, ScoreRow,
    SnrAggregate, VemEnhancer,
};
pub use metrics::{mix_at_snr, si_sdr, snr_db, SISDR_CAP};
pub use toy::{
    generate_toy_corpus, white_noise, white_noise_frame_energy, GroundTruth, RoundTripKernel,
    ToyCorpus, ToyCorpusSpec, ToyUtterance, TOY_SAMPLE_RATE,
};
