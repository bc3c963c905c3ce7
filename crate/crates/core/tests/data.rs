use minvae_core::data::{
    evaluate, generate_toy_corpus, make_mixtures, mix_at_snr, si_sdr, snr_db, white_noise, Bypass,
    ToyCorpusSpec, SISDR_CAP,
};
use minvae_core::dsp::Waveform;
use minvae_core::Rng;

fn wave(samples: Vec<f64>) -> Waveform {
    Waveform::new(samples, 16_000).unwrap()
}

fn random_wave(len: usize, seed: u64) -> Waveform {
    wave(Rng::new(seed).normals(len))
}

#[test]
fn si_sdr_of_identical_signals_is_capped() {
    let r = random_wave(500, 1);
    assert_eq!(si_sdr(&r, &r).unwrap(), SISDR_CAP);
}

#[test]
fn si_sdr_ignores_estimate_scale() {
    let r = random_wave(800, 2);
    let n = random_wave(800, 3);
    let e = wave(
        r.samples
            .iter()
            .zip(&n.samples)
            .map(|(a, b)| a + 0.3 * b)
            .collect(),
    );
    let scaled = wave(e.samples.iter().map(|v| v * 7.5).collect());
    let a = si_sdr(&r, &e).unwrap();
    assert!((a - si_sdr(&r, &scaled).unwrap()).abs() < 1e-9);
    assert!(a > 5.0 && a < 15.0);
}

#[test]
fn si_sdr_of_equal_power_orthogonal_mix_is_zero() {
    let n = 4000;
    let r = wave((0..n).map(|t| (t as f64 * 0.05).sin()).collect());
    let q = wave((0..n).map(|t| (t as f64 * 0.05).cos()).collect());
    let e = wave(
        r.samples
            .iter()
            .zip(&q.samples)
            .map(|(a, b)| a + b)
            .collect(),
    );
    assert!(si_sdr(&r, &e).unwrap().abs() < 0.1);
}

#[test]
fn si_sdr_rejects_silent_reference_and_length_mismatch() {
    assert!(si_sdr(&wave(vec![0.0; 10]), &random_wave(10, 1)).is_err());
    assert!(si_sdr(&random_wave(10, 1), &random_wave(11, 1)).is_err());
}

#[test]
fn mixing_hits_the_requested_snr() {
    let clean = random_wave(16_000, 4);
    let noise = random_wave(16_000, 5);
    for target in [-5.0, 0.0, 12.5, 200.0] {
        let mix = mix_at_snr(&clean, &noise, target).unwrap();
        let residual: Vec<f64> = mix
            .samples
            .iter()
            .zip(&clean.samples)
            .map(|(m, c)| m - c)
            .collect();
        let got = snr_db(&clean.samples, &residual);
        assert!((got - target).abs() < 1e-6, "{target}: {got}");
    }
    let mix = mix_at_snr(&clean, &noise, 200.0).unwrap();
    assert!(si_sdr(&clean, &mix).unwrap() > 99.0);
}

#[test]
fn mixing_rejects_bad_inputs() {
    let clean = random_wave(100, 4);
    assert!(mix_at_snr(&clean, &random_wave(99, 5), 0.0).is_err());
    assert!(mix_at_snr(&clean, &wave(vec![0.0; 100]), 0.0).is_err());
    assert!(mix_at_snr(&clean, &random_wave(100, 5), f64::NAN).is_err());
}

#[test]
fn uninformative_visual_features_are_uncorrelated_with_latents() {
    let corpus = generate_toy_corpus(&ToyCorpusSpec {
        n_utterances: 50,
        frames_per_utterance: 200,
        freq_bins: 16,
        latent: 4,
        visual: 4,
        visual_informativeness: 0.0,
        seed: 6,
    })
    .unwrap();
    let (mut zs, mut vs) = (Vec::new(), Vec::new());
    for u in &corpus.utterances {
        zs.extend(u.z.rows().into_iter().map(|r| r.to_vec()));
        vs.extend(u.visual.rows().into_iter().map(|r| r.to_vec()));
    }
    assert_eq!(zs.len(), 10_000);
    for l in 0..4 {
        for m in 0..4 {
            let a: Vec<f64> = zs.iter().map(|r| r[l]).collect();
            let b: Vec<f64> = vs.iter().map(|r| r[m]).collect();
            let rho = correlation(&a, &b);
            assert!(rho.abs() <= 0.05, "rho[{l},{m}] = {rho}");
        }
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn informative_visual_features_are_a_linear_map_of_latents() {
    let corpus = generate_toy_corpus(&ToyCorpusSpec {
        n_utterances: 2,
        frames_per_utterance: 30,
        freq_bins: 16,
        latent: 3,
        visual: 5,
        ..Default::default()
    })
    .unwrap();
    for u in &corpus.utterances {
        let expect = u.z.dot(&corpus.truth.c.t());
        for (a, b) in u.visual.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn corpus_is_reproducible_from_its_seed() {
    let spec = ToyCorpusSpec {
        n_utterances: 3,
        frames_per_utterance: 20,
        freq_bins: 16,
        latent: 3,
        visual: 3,
        seed: 42,
        ..Default::default()
    };
    let a = generate_toy_corpus(&spec).unwrap();
    let b = generate_toy_corpus(&spec).unwrap();
    for (x, y) in a.utterances.iter().zip(&b.utterances) {
        assert_eq!(x.clean.samples, y.clean.samples);
        assert_eq!(x.visual, y.visual);
        assert_eq!(x.z, y.z);
    }
    let c = generate_toy_corpus(&ToyCorpusSpec { seed: 43, ..spec }).unwrap();
    assert_ne!(a.utterances[0].clean.samples, c.utterances[0].clean.samples);
}

#[test]
fn latent_codes_follow_the_mixture_prior() {
    let corpus = generate_toy_corpus(&ToyCorpusSpec {
        n_utterances: 200,
        frames_per_utterance: 100,
        freq_bins: 16,
        latent: 2,
        visual: 2,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    let t = &corpus.truth;
    for k in 0..2 {
        let mean = t.pi * t.mu_a[k] + (1.0 - t.pi) * t.mu_v[k];
        let var = t.pi * t.sigma_a
            + (1.0 - t.pi) * t.sigma_v
            + t.pi * (1.0 - t.pi) * (t.mu_a[k] - t.mu_v[k]).powi(2);
        // Standard errors from per-utterance averages.
        let firsts: Vec<f64> = corpus
            .utterances
            .iter()
            .map(|u| u.z.column(k).mean().unwrap())
            .collect();
        let seconds: Vec<f64> = corpus
            .utterances
            .iter()
            .map(|u| u.z.column(k).mapv(|z| (z - mean).powi(2)).mean().unwrap())
            .collect();
        for (stat, target) in [(firsts, mean), (seconds, var)] {
            let n = stat.len() as f64;
            let m = stat.iter().sum::<f64>() / n;
            let se = (stat.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
            assert!((m - target).abs() < 3.0 * se, "{m} vs {target} (se {se})");
        }
    }
}

#[test]
fn bypass_scores_zero_improvement() {
    let corpus = generate_toy_corpus(&ToyCorpusSpec {
        n_utterances: 3,
        frames_per_utterance: 20,
        freq_bins: 16,
        latent: 3,
        visual: 3,
        ..Default::default()
    })
    .unwrap();
    let mixtures = make_mixtures(&corpus.utterances, &[-5.0, 0.0, 5.0], 1).unwrap();
    assert_eq!(mixtures.len(), 9);
    for m in &mixtures {
        let residual: Vec<f64> = m
            .noisy
            .samples
            .iter()
            .zip(&m.clean.samples)
            .map(|(a, b)| a - b)
            .collect();
        assert!((snr_db(&m.clean.samples, &residual) - m.snr_db).abs() < 1e-6);
    }
    let report = evaluate(&Bypass, &mixtures).unwrap();
    assert!(report.rows.iter().all(|r| r.delta == 0.0));
    let agg = report.aggregates();
    assert_eq!(
        agg.iter().map(|a| a.snr_db).collect::<Vec<_>>(),
        vec![-5.0, 0.0, 5.0]
    );
    assert!(agg.iter().all(|a| a.count == 3));
}

#[test]
fn white_noise_has_unit_variance() {
    let w = white_noise(100_000, &mut Rng::new(3)).unwrap();
    let var = w.samples.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
    assert!((var - 1.0).abs() < 0.02);
}
