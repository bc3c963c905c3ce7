use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;

use crate::error::{ensure, Result};
use crate::nn::Rng;

/// Noise added to a subset of audio-encoder input frames during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseInjection {
    pub enabled: bool,
    /// Share of frames perturbed each epoch.
    pub fraction: f64,
    /// Per-frame signal-to-noise ratio of the injected noise.
    pub snr_db: f64,
}

impl Default for NoiseInjection {
    fn default() -> Self {
        Self {
            enabled: false,
            fraction: 1.0 / 3.0,
            snr_db: 0.0,
        }
    }
}

impl NoiseInjection {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..=1.0).contains(&self.fraction),
            "noise injection fraction must lie in [0, 1], got {}",
            self.fraction
        );
        ensure!(
            self.snr_db.is_finite(),
            "noise injection SNR must be finite"
        );
        Ok(())
    }
}

/// Audio-encoder inputs after injection.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    /// `|s + noise|²` for perturbed frames, `|s|²` elsewhere.
    pub encoder_power: Array2<f64>,
    /// Indices of the perturbed frames, ascending.
    pub perturbed: Vec<usize>,
}

/// Replaces a random `fraction` of frames by the power of the frame plus
/// uniform complex noise whose energy is `10^(−snr/10)` times the frame's.
///
/// Only the audio encoder sees the result; reconstruction targets and visual
/// features are left alone by the callers.
pub fn augment_audio_input(
    frames: ArrayView2<Complex64>,
    injection: &NoiseInjection,
    rng: &mut Rng,
) -> Result<Augmented> {
    injection.validate()?;
    let mut encoder_power = frames.mapv(|c| c.norm_sqr());
    if !injection.enabled {
        return Ok(Augmented {
            encoder_power,
            perturbed: Vec::new(),
        });
    }
    let n = frames.nrows();
    let count = (injection.fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut perturbed = order[..count.min(n)].to_vec();
    perturbed.sort_unstable();
    let ratio = 10f64.powf(-injection.snr_db / 10.0);
    for &i in &perturbed {
        let row = frames.row(i);
        let noise: Vec<Complex64> = row
            .iter()
            .map(|_| Complex64::new(rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)))
            .collect();
        let signal: f64 = row.iter().map(|c| c.norm_sqr()).sum();
        let raw: f64 = noise.iter().map(|c| c.norm_sqr()).sum();
        let gain = if raw > 0.0 {
            (signal * ratio / raw).sqrt()
        } else {
            0.0
        };
        for (f, (s, e)) in row.iter().zip(&noise).enumerate() {
            encoder_power[[i, f]] = (s + e * gain).norm_sqr();
        }
    }
    Ok(Augmented {
        encoder_power,
        perturbed,
    })
}
