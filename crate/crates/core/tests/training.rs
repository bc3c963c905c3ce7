use ndarray::{concatenate, Array2, Axis};
use num_complex::Complex64;

use minvae_core::data::{generate_toy_corpus, ToyCorpusSpec};
use minvae_core::model::{log_power, loglik_complex_gaussian, Component};
use minvae_core::train::{
    elbo_standard, evaluate_standard_loss, j_tilde, kl_bernoulli, kl_diagonal, kl_gaussians, train,
    update_pi, update_responsibility, Posterior, TrainConfig, TrainError, TrainingSet,
};
use minvae_core::{MinVae, ModelDims, Rng, Variant};

fn dims(freq_bins: usize, visual: usize) -> ModelDims {
    ModelDims {
        freq_bins,
        latent: 3,
        visual,
        nmf_rank: 2,
        hidden: 16,
    }
}

fn toy_set(n_utterances: usize) -> TrainingSet {
    let corpus = generate_toy_corpus(&ToyCorpusSpec {
        n_utterances,
        frames_per_utterance: 40,
        freq_bins: 16,
        latent: 3,
        visual: 4,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let frames: Vec<_> = corpus
        .utterances
        .iter()
        .map(|u| u.spectrogram.frames.view())
        .collect();
    let visual: Vec<_> = corpus.utterances.iter().map(|u| u.visual.view()).collect();
    TrainingSet::new(
        concatenate(Axis(0), &frames).unwrap(),
        Some(concatenate(Axis(0), &visual).unwrap()),
    )
    .unwrap()
}

fn config(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: lr,
        seed: 3,
        ..Default::default()
    }
}

fn fresh(variant: Variant) -> MinVae {
    MinVae::new(variant, dims(16, 4), &mut Rng::new(21)).unwrap()
}

#[test]
fn responsibility_examples() {
    assert_eq!(update_responsibility(1.0, 1.0, 0.5), 0.5);
    assert!((update_responsibility(3.0, 1.0, 0.5) - 0.880_797_077_977_882_3).abs() < 1e-15);
    assert!(update_responsibility(1e4, 0.0, 0.5) > 1.0 - 1e-12);
    assert!(update_responsibility(-1e4, 0.0, 0.5) < 1e-12);
    let a = update_responsibility(3.25, 1.5, 0.3);
    let b = update_responsibility(3.25 + 40.0, 1.5 + 40.0, 0.3);
    assert_eq!(a, b);
    let mut prev = 0.0;
    for k in -20..=20 {
        let p = update_responsibility(k as f64 * 0.5, 0.0, 0.4);
        assert!(p > prev);
        prev = p;
    }
}

#[test]
fn pi_is_clipped_mean() {
    assert!((update_pi(&[0.1, 0.2, 0.6]).unwrap() - 0.3).abs() < 1e-15);
    assert_eq!(update_pi(&[0.0, 0.0]).unwrap(), 1e-4);
    assert_eq!(update_pi(&[1.0]).unwrap(), 1.0 - 1e-4);
    assert!(update_pi(&[]).is_err());
    assert!(update_pi(&[1.5]).is_err());
}

#[test]
fn bernoulli_kl_examples() {
    assert_eq!(kl_bernoulli(0.3, 0.3), 0.0);
    assert!((kl_bernoulli(1.0, 0.5) - 2f64.ln()).abs() < 1e-15);
    assert!((kl_bernoulli(0.0, 0.25) - (4.0f64 / 3.0).ln()).abs() < 1e-15);
    let expected = 0.2 * (0.2f64 / 0.6).ln() + 0.8 * (0.8f64 / 0.4).ln();
    assert!((kl_bernoulli(0.2, 0.6) - expected).abs() < 1e-15);
}

#[test]
fn gaussian_kl_matches_monte_carlo() {
    let (m1, v1) = ([0.3, -1.2, 0.7], [0.5, 2.0, 0.1]);
    let (m2, v2) = ([1.0, 0.0, -0.4], 1.7);
    let analytic = kl_gaussians(&m1, &v1, &m2, v2).unwrap();
    let mut rng = Rng::new(13);
    let n = 200_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let mut log_ratio = 0.0;
        for i in 0..3 {
            let x = m1[i] + v1[i].sqrt() * rng.normal();
            let lq = -0.5 * (v1[i].ln() + (x - m1[i]).powi(2) / v1[i]);
            let lp = -0.5 * (f64::ln(v2) + (x - m2[i]).powi(2) / v2);
            log_ratio += lq - lp;
        }
        sum += log_ratio;
        sq += log_ratio * log_ratio;
    }
    let mean = sum / n as f64;
    let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!(
        (mean - analytic).abs() < 4.0 * se,
        "{mean} vs {analytic} (se {se})"
    );

    let diag = kl_diagonal(&m1, &v1, &m2, &[v2; 3]).unwrap();
    assert!((diag - analytic).abs() < 1e-12);
    assert!(kl_gaussians(&m1, &v1, &m1, 1.0).unwrap() >= 0.0);
}

#[test]
fn branch_costs_agree_for_mirrored_encoders() {
    let d = dims(4, 4);
    let mut m = MinVae::new(Variant::MinV2, d, &mut Rng::new(5)).unwrap();
    m.visual_encoder = m.audio_encoder.clone();
    let frame = [
        Complex64::new(0.5, 1.0),
        Complex64::new(-2.0, 0.1),
        Complex64::new(0.3, 0.3),
        Complex64::new(1.5, -0.2),
    ];
    let power = Array2::from_shape_fn((1, 4), |(_, f)| frame[f].norm_sqr());
    let v = log_power(power.view()).row(0).to_vec();
    let ja = j_tilde(&m, &frame, Some(&v), Posterior::Audio, &mut Rng::new(77)).unwrap();
    let jv = j_tilde(&m, &frame, Some(&v), Posterior::Visual, &mut Rng::new(77)).unwrap();
    assert!((ja - jv).abs() < 1e-12, "{ja} vs {jv}");
    assert_eq!(update_responsibility(jv, ja, m.priors.pi), 0.5);
}

#[test]
fn elbo_of_constant_decoder_is_the_loglikelihood() {
    let m = MinVae::zeros(Variant::AVae, dims(4, 4)).unwrap();
    let frame = [
        Complex64::new(0.5, 1.0),
        Complex64::new(-2.0, 0.1),
        Complex64::new(0.3, 0.3),
        Complex64::new(1.5, -0.2),
    ];
    let loglik = loglik_complex_gaussian(&frame, &[1.0; 4]).unwrap();
    let neg_elbo = elbo_standard(&m, Posterior::Audio, &frame, None, &mut Rng::new(1))
        .unwrap()
        .loss;
    let elbo = -neg_elbo;
    assert!(elbo <= loglik + 0.01, "{elbo} vs {loglik}");
    assert!((elbo - loglik).abs() < 1e-9, "{elbo} vs {loglik}");
}

#[test]
fn symmetric_model_keeps_pi_at_one_half() {
    let set = toy_set(2);
    let m = MinVae::zeros(Variant::MinV2, dims(16, 4)).unwrap();
    let out = train(m, &set, &config(1, 1e-4), None).unwrap();
    let e = &out.log.epochs[0];
    assert!((e.pi - 0.5).abs() < 1e-6, "{}", e.pi);
    assert!((e.mean_pi_n - 0.5).abs() < 1e-6);
}

#[test]
fn standard_training_loss_mostly_decreases() {
    let set = toy_set(6);
    let mut model = fresh(Variant::AVae);
    let mut state = None;
    let mut losses = Vec::new();
    for epoch in 1..=25 {
        let out = train(model, &set, &config(epoch, 1e-3), state).unwrap();
        losses.push(evaluate_standard_loss(&out.model, &set, Posterior::Audio, 99).unwrap());
        assert_eq!(out.log.epochs[0].pi, 0.5);
        model = out.model;
        state = Some(out.state);
    }
    let down = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down * 10 >= 9 * (losses.len() - 1), "{losses:?}");
    assert!(losses[24] < losses[0]);
}

#[test]
fn every_variant_trains() {
    let set = toy_set(2);
    for v in [
        Variant::AVae,
        Variant::VVae,
        Variant::AvVae,
        Variant::MinV1,
        Variant::MinV2,
        Variant::MinV3,
    ] {
        let out = train(fresh(v), &set, &config(2, 1e-3), None).unwrap();
        assert_eq!(out.log.epochs.len(), 2, "{v}");
        assert_eq!(out.state.next_epoch, 2);
        assert!(out.log.epochs.iter().all(|e| e.mean_loss.is_finite()));
    }
}

#[test]
fn v3_alternates_encoders_and_freezes_priors() {
    let set = toy_set(2);
    let start = fresh(Variant::MinV3);
    let one = train(start.clone(), &set, &config(1, 1e-3), None)
        .unwrap()
        .model;
    assert_ne!(one.audio_encoder, start.audio_encoder);
    assert_eq!(one.visual_encoder, start.visual_encoder);
    assert_ne!(one.decoder, start.decoder);

    let out = train(start.clone(), &set, &config(8, 3e-3), None).unwrap();
    let two = &out.model;
    assert_ne!(two.visual_encoder, start.visual_encoder);
    assert_eq!(two.priors, start.priors);
    assert!(out.log.epochs[7].mean_loss < out.log.epochs[1].mean_loss);
    assert_eq!(out.log.epochs[0].mean_pi_n, 1.0);
    assert_eq!(out.log.epochs[1].mean_pi_n, 0.0);
}

#[test]
fn minvae_learns_prior_parameters() {
    let set = toy_set(2);
    let start = fresh(Variant::MinV2);
    let out = train(start.clone(), &set, &config(3, 1e-2), None).unwrap();
    assert_ne!(out.model.priors.mu_a, start.priors.mu_a);
    assert_ne!(out.model.priors.mu_v, start.priors.mu_v);
    assert!(out.model.component_params(Component::AudioPrior).is_some());
}

#[test]
fn training_is_deterministic() {
    let set = toy_set(2);
    let a = train(fresh(Variant::MinV2), &set, &config(3, 1e-3), None).unwrap();
    let b = train(fresh(Variant::MinV2), &set, &config(3, 1e-3), None).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.log.losses(), b.log.losses());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let set = toy_set(2);
    let full = train(fresh(Variant::MinV2), &set, &config(4, 1e-3), None).unwrap();
    let half = train(fresh(Variant::MinV2), &set, &config(2, 1e-3), None).unwrap();
    let rest = train(half.model, &set, &config(4, 1e-3), Some(half.state)).unwrap();
    assert_eq!(rest.model, full.model);
    let tail = |log: &minvae_core::train::TrainingLog| -> Vec<(usize, f64, f64)> {
        log.epochs
            .iter()
            .filter(|e| e.epoch >= 2)
            .map(|e| (e.epoch, e.mean_loss, e.pi))
            .collect()
    };
    assert_eq!(tail(&rest.log), tail(&full.log));
}

#[test]
fn huge_step_size_reports_divergence() {
    let set = toy_set(2);
    let err = train(fresh(Variant::AVae), &set, &config(20, 1e6), None).unwrap_err();
    match err {
        TrainError::Diverged { last_good, log, .. } => {
            assert!(last_good.params_flat().iter().all(|v| v.is_finite()));
            assert!(log.epochs.iter().all(|e| e.mean_loss.is_finite()));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}
