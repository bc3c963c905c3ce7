use ndarray::{Array1, Array2};
use num_complex::Complex64;

use minvae_core::data::{generate_toy_corpus, si_sdr, ToyCorpusSpec};
use minvae_core::dsp::istft;
use minvae_core::enhance::{
    enhance_spectrogram, enhance_spectrogram_with, estimate_speech, harmonic_gamma, is_divergence,
    log_rz_unnorm, m_step_nmf, update_pi_test, ve_alpha, ve_alpha_samples, ve_s, ve_z_mh,
    ChainConfig, EnhanceConfig, NmfModel,
};
use minvae_core::model::{isotropic_logpdf, prior_logpdf};
use minvae_core::train::update_responsibility;
use minvae_core::{Error, MinVae, ModelDims, Rng, Variant};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn small_dims() -> ModelDims {
    ModelDims {
        freq_bins: 6,
        latent: 3,
        visual: 2,
        nmf_rank: 2,
        hidden: 5,
    }
}

#[test]
fn ve_s_equal_power_halves_the_observation() {
    let x = [c(2.0, -4.0), c(0.5, 1.0)];
    let (m, nu) = ve_s(&x, &[3.0, 0.7], &[3.0, 0.7]).unwrap();
    assert_eq!(m, vec![c(1.0, -2.0), c(0.25, 0.5)]);
    assert_eq!(nu, vec![1.5, 0.35]);
}

#[test]
fn ve_s_noiseless_limit_passes_observation_through() {
    let x = [c(1.0, 2.0)];
    let (m, nu) = ve_s(&x, &[1.0], &[1e-15]).unwrap();
    assert!((m[0] - x[0]).norm() < 1e-12);
    assert!(nu[0] < 1e-11);
}

#[test]
fn gamma_is_harmonic_mean_of_samples() {
    let v = Array2::from_shape_vec((2, 1), vec![1.0, 3.0]).unwrap();
    assert!((harmonic_gamma(v.view())[0] - 1.5).abs() < 1e-15);
}

#[test]
fn speech_estimate_limits() {
    let x = Array2::from_shape_vec((1, 2), vec![c(1.0, -1.0), c(3.0, 2.0)]).unwrap();
    let wh = Array2::from_elem((1, 2), 1.0);
    let big = Array2::from_elem((1, 2), 1e6);
    let s = estimate_speech(x.view(), big.view(), wh.view()).unwrap();
    for (a, b) in s.iter().zip(&x) {
        assert!((a - b).norm() / b.norm() < 1e-5);
    }
    let s = estimate_speech(x.view(), wh.view(), wh.view()).unwrap();
    for (a, b) in s.iter().zip(&x) {
        assert_eq!(*a, b / 2.0);
    }
}

#[test]
fn wiener_gain_is_strictly_inside_unit_interval() {
    let mut rng = Rng::new(5);
    let x = Array2::from_shape_simple_fn((4, 8), || c(rng.normal(), rng.normal()));
    let g = Array2::from_shape_simple_fn((4, 8), || rng.uniform_range(1e-3, 10.0));
    let w = Array2::from_shape_simple_fn((4, 8), || rng.uniform_range(1e-3, 10.0));
    let s = estimate_speech(x.view(), g.view(), w.view()).unwrap();
    for (sv, xv) in s.iter().zip(&x) {
        let gain = sv.norm() / xv.norm();
        assert!(gain > 0.0 && gain < 1.0);
    }
}

#[test]
fn ve_alpha_examples() {
    assert_eq!(
        ve_alpha(&[(-2.0, -2.0), (-1.0, -1.0)], 0.3).unwrap(),
        0.3 / 0.7 / (1.0 + 0.3 / 0.7)
    );
    assert_eq!(ve_alpha(&[(0.0, 0.0)], 0.5).unwrap(), 0.5);
    assert!(ve_alpha(&[], 0.5).is_err());

    let mut m = MinVae::zeros(Variant::MinV2, small_dims()).unwrap();
    m.priors.mu_a = Array1::from(vec![4.0, 0.0, 0.0]);
    m.priors.mu_v = Array1::from(vec![-4.0, 0.0, 0.0]);
    m.priors.log_sigma_a = (0.25f64).ln();
    m.priors.log_sigma_v = (0.25f64).ln();
    let at_audio = vec![vec![4.0, 0.0, 0.0]; 3];
    // log-ratio at mu_a is ||mu_a - mu_v||² / (2 σ) = 128.
    let p = ve_alpha_samples(&m, &at_audio, 0.5).unwrap();
    assert!(p > 1.0 - 1e-12, "{p}");
    let symmetric = MinVae::zeros(Variant::MinV2, small_dims()).unwrap();
    let p = ve_alpha_samples(&symmetric, &[vec![0.3, -1.0, 2.0]], 0.27).unwrap();
    assert!((p - 0.27).abs() < 1e-15);
}

#[test]
fn ve_alpha_agrees_with_training_responsibility_for_one_sample() {
    // With a decoder that ignores z, the reconstruction terms of the two
    // branch costs cancel and only the prior log-densities differ.
    let mut m = MinVae::zeros(Variant::MinV2, small_dims()).unwrap();
    m.priors.mu_a = Array1::from(vec![0.5, -0.2, 1.0]);
    m.priors.mu_v = Array1::from(vec![-0.3, 0.4, 0.0]);
    m.priors.log_sigma_a = 0.3;
    m.priors.log_sigma_v = -0.4;
    let z = vec![0.1, 0.2, -0.7];
    let la = prior_logpdf(&m.priors, &z, true);
    let lv = prior_logpdf(&m.priors, &z, false);
    let recon = -3.25;
    let (j_audio, j_visual) = (-la - recon, -lv - recon);
    let expected = update_responsibility(j_visual, j_audio, 0.4);
    let got = ve_alpha_samples(&m, &[z], 0.4).unwrap();
    assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
}

#[test]
fn log_target_reduces_to_audio_prior_when_pi_n_is_one() {
    let mut rng = Rng::new(8);
    let mut m = MinVae::new(Variant::MinV2, small_dims(), &mut rng).unwrap();
    m.priors.mu_a = Array1::from(vec![0.2, 0.1, -0.5]);
    m.priors.mu_v = Array1::from(vec![1.0, 1.0, 1.0]);
    let z = [0.3, -0.1, 0.4];
    let mm: Vec<Complex64> = (0..6).map(|i| c(i as f64 * 0.1, 0.2)).collect();
    let nu = vec![0.05; 6];
    let v = [0.5, -0.5];
    let sigma = m.decode_variance(&z, Some(&v)).unwrap();
    let speech: f64 = sigma
        .iter()
        .zip(mm.iter().zip(&nu))
        .map(|(s, (m, n))| -s.ln() - (m.norm_sqr() + n) / s)
        .sum();
    let direct =
        speech + isotropic_logpdf(&z, m.priors.mu_a.as_slice().unwrap(), m.priors.sigma_a());
    let got = log_rz_unnorm(&m, &z, &mm, &nu, 1.0, Some(&v)).unwrap();
    assert!((got - direct).abs() < 1e-12);

    let half = log_rz_unnorm(&m, &z, &mm, &nu, 0.25, Some(&v)).unwrap();
    let direct = speech
        + 0.25 * prior_logpdf(&m.priors, &z, true)
        + 0.75 * prior_logpdf(&m.priors, &z, false);
    assert!((half - direct).abs() < 1e-12);
}

#[test]
fn constant_decoder_target_depends_on_z_only_through_priors() {
    let m = MinVae::zeros(Variant::MinV2, small_dims()).unwrap();
    let mm = vec![c(1.0, 1.0); 6];
    let nu = vec![0.5; 6];
    let za = [0.1, 0.2, 0.3];
    let zb = [-1.0, 0.5, 2.0];
    let d_target = log_rz_unnorm(&m, &za, &mm, &nu, 0.6, Some(&[0.0, 1.0])).unwrap()
        - log_rz_unnorm(&m, &zb, &mm, &nu, 0.6, Some(&[0.0, 1.0])).unwrap();
    let prior = |z: &[f64]| {
        0.6 * prior_logpdf(&m.priors, z, true) + 0.4 * prior_logpdf(&m.priors, z, false)
    };
    assert!((d_target - (prior(&za) - prior(&zb))).abs() < 1e-12);
}

#[test]
fn frozen_chain_stays_at_start() {
    let mut rng = Rng::new(2);
    let m = MinVae::new(Variant::MinV2, small_dims(), &mut rng).unwrap();
    let cfg = ChainConfig {
        total: 40,
        burnin: 30,
        epsilon: 1e-30,
    };
    let z0 = [0.4, -0.3, 0.9];
    let mm = vec![c(0.3, 0.1); 6];
    let chain = ve_z_mh(
        &m,
        Some(&[0.2, 0.1]),
        &mm,
        &[0.1; 6],
        0.5,
        &z0,
        &cfg,
        &mut rng,
    )
    .unwrap();
    assert_eq!(chain.samples.len(), 10);
    for s in &chain.samples {
        for (a, b) in s.iter().zip(&z0) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert!((0.0..=1.0).contains(&chain.acceptance_rate));
}

#[test]
fn chain_config_rejects_burnin_past_total() {
    let bad = ChainConfig {
        total: 5,
        burnin: 5,
        epsilon: 0.01,
    };
    assert!(bad.validate().is_err());
}

#[test]
fn nmf_fixed_point_and_nonnegativity() {
    let mut rng = Rng::new(3);
    let mut nmf = NmfModel::random(7, 3, 9, 1.0, &mut rng).unwrap();
    let v = nmf.variance();
    let (w0, h0) = (nmf.w.clone(), nmf.h.clone());
    m_step_nmf(v.view(), &mut nmf).unwrap();
    for (a, b) in nmf.w.iter().zip(&w0).chain(nmf.h.iter().zip(&h0)) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    let target = Array2::from_shape_simple_fn((7, 9), || rng.uniform_range(0.01, 5.0));
    for _ in 0..20 {
        m_step_nmf(target.view(), &mut nmf).unwrap();
        assert!(nmf.w.iter().chain(nmf.h.iter()).all(|&x| x >= 1e-12));
    }
}

#[test]
fn rank_one_nmf_converges() {
    let mut rng = Rng::new(11);
    let w: Vec<f64> = (0..12).map(|_| rng.uniform_range(0.5, 2.0)).collect();
    let h: Vec<f64> = (0..15).map(|_| rng.uniform_range(0.5, 2.0)).collect();
    let v = Array2::from_shape_fn((12, 15), |(f, n)| w[f] * h[n]);
    let mut nmf = NmfModel::random(12, 1, 15, 1.0, &mut rng).unwrap();
    let mut prev = is_divergence(v.view(), nmf.variance().view());
    for _ in 0..50 {
        m_step_nmf(v.view(), &mut nmf).unwrap();
        let d = is_divergence(v.view(), nmf.variance().view());
        assert!(d <= prev + 1e-10);
        prev = d;
    }
    assert!(prev <= 1e-6, "{prev}");
}

#[test]
fn test_time_pi_examples() {
    assert_eq!(update_pi_test(&[0.2, 0.8]).unwrap(), 0.5);
    assert_eq!(update_pi_test(&[1.0; 4]).unwrap(), 1.0 - 1e-4);
    assert!(update_pi_test(&[]).is_err());
}

fn toy() -> minvae_core::data::ToyCorpus {
    generate_toy_corpus(&ToyCorpusSpec {
        n_utterances: 1,
        frames_per_utterance: 20,
        freq_bins: 16,
        latent: 3,
        visual: 2,
        ..Default::default()
    })
    .unwrap()
}

fn toy_model() -> MinVae {
    let dims = ModelDims {
        freq_bins: 16,
        latent: 3,
        visual: 2,
        nmf_rank: 2,
        hidden: 8,
    };
    MinVae::new(Variant::MinV2, dims, &mut Rng::new(4)).unwrap()
}

#[test]
fn noiseless_input_is_reproduced() {
    let corpus = toy();
    let u = &corpus.utterances[0];
    let model = toy_model();
    let cfg = EnhanceConfig {
        vem_iters: 5,
        ..Default::default()
    };
    let nmf = NmfModel::random(16, 2, u.spectrogram.n_frames(), 1e-10, &mut Rng::new(1)).unwrap();
    let out =
        enhance_spectrogram_with(&model, &u.spectrogram, Some(u.visual.view()), &cfg, nmf).unwrap();
    let wave = istft(&out.speech).unwrap();
    let score = si_sdr(&u.clean, &wave).unwrap();
    assert!(score >= 20.0, "{score}");
    assert_eq!(out.diagnostics.iterations.len(), 5);
}

#[test]
fn enhancement_is_deterministic() {
    let corpus = toy();
    let u = &corpus.utterances[0];
    let model = toy_model();
    let cfg = EnhanceConfig {
        vem_iters: 3,
        seed: 17,
        ..Default::default()
    };
    let a = enhance_spectrogram(&model, &u.spectrogram, Some(u.visual.view()), &cfg).unwrap();
    let b = enhance_spectrogram(&model, &u.spectrogram, Some(u.visual.view()), &cfg).unwrap();
    assert_eq!(a.speech.frames, b.speech.frames);
    assert_eq!(a.diagnostics, b.diagnostics);
}

#[test]
fn frame_count_mismatch_is_invalid_input() {
    let corpus = toy();
    let u = &corpus.utterances[0];
    let model = toy_model();
    let short = u.visual.slice(ndarray::s![..5, ..]).to_owned();
    let err = enhance_spectrogram(
        &model,
        &u.spectrogram,
        Some(short.view()),
        &EnhanceConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)), "{err:?}");
}
