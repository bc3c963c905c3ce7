use crate::dsp::Waveform;
use crate::error::{ensure, Result};

/// Scores are clamped to `±SISDR_CAP` dB.
pub const SISDR_CAP: f64 = 100.0;

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Signal-to-noise ratio of two signals in dB.
pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (energy(signal) / energy(noise)).log10()
}

/// Adds `noise`, rescaled so the mixture has the requested SNR.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    ensure!(
        clean.len() == noise.len(),
        "clean has {} samples, noise {}",
        clean.len(),
        noise.len()
    );
    ensure!(
        clean.sample_rate == noise.sample_rate,
        "sample rates differ: {} vs {}",
        clean.sample_rate,
        noise.sample_rate
    );
    ensure!(snr_db.is_finite(), "SNR must be finite");
    let pc = energy(&clean.samples);
    let pn = energy(&noise.samples);
    ensure!(pc > 0.0, "clean signal has zero power");
    ensure!(pn > 0.0, "noise signal has zero power");
    let gain = (pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = clean
        .samples
        .iter()
        .zip(&noise.samples)
        .map(|(c, n)| c + gain * n)
        .collect();
    Waveform::new(samples, clean.sample_rate)
}

/// Scale-invariant signal-to-distortion ratio in dB, clamped to
/// `±SISDR_CAP`.
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    ensure!(
        reference.len() == estimate.len(),
        "reference has {} samples, estimate {}",
        reference.len(),
        estimate.len()
    );
    let r = &reference.samples;
    let e = &estimate.samples;
    let rr = energy(r);
    ensure!(rr > 0.0, "reference signal has zero power");
    let scale = r.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target: f64 = rr * scale * scale;
    let residual: f64 = r.iter().zip(e).map(|(a, b)| (b - scale * a).powi(2)).sum();
    let db = 10.0 * (target / residual).log10();
    Ok(if db.is_nan() {
        -SISDR_CAP
    } else {
        db.clamp(-SISDR_CAP, SISDR_CAP)
    })
}
