//! STFT analysis/synthesis with sine windows and power features.
//!
//! Frames are stored row-wise: a spectrogram with `N` frames and `F` bins is
//! an `N × F` matrix. The forward transform is the unnormalised DFT of the
//! windowed frame; synthesis is least-squares overlap-add with the same sine
//! window, so `istft(stft(w))` reproduces `w` wherever the window sum is
//! bounded away from zero.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{ensure, Result};

/// Window length used for 16 kHz audio (64 ms).
pub const AUDIO_WINDOW_LEN: usize = 1024;
/// Hop for 16 kHz audio: one STFT frame per 30 fps video frame.
pub const AUDIO_HOP: usize = 533;
pub const AUDIO_SAMPLE_RATE: u32 = 16_000;

/// Hop used when a geometry is derived from a window length alone.
pub fn default_hop(window_len: usize) -> usize {
    if window_len == AUDIO_WINDOW_LEN {
        AUDIO_HOP
    } else {
        window_len / 2
    }
}

/// Window length whose one-sided spectrum has `freq_bins` bins.
pub fn window_len_for_bins(freq_bins: usize) -> usize {
    2 * (freq_bins - 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        ensure!(sample_rate > 0, "sample rate must be positive");
        ensure!(
            samples.iter().all(|s| s.is_finite()),
            "waveform contains non-finite samples"
        );
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }
}

/// Complex STFT coefficients, `N × F`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: Array2<Complex64>,
    pub window_len: usize,
    pub hop: usize,
    /// Length of the waveform that was analysed, if known.
    pub original_len: Option<usize>,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.frames.ncols()
    }
}

/// `|S|²` per bin, `N × F`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerSpectrogram {
    pub frames: Array2<f64>,
}

/// Sine (square-root Hann) window.
pub fn sine_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| (PI * (n as f64 + 0.5) / len as f64).sin())
        .collect()
}

/// Number of frames produced for a signal of `len` samples.
pub fn frame_count(len: usize, window_len: usize, hop: usize) -> usize {
    if len <= window_len {
        1
    } else {
        (len - window_len).div_ceil(hop) + 1
    }
}

fn check_geometry(window_len: usize, hop: usize) -> Result<()> {
    ensure!(
        window_len >= 2 && window_len.is_multiple_of(2),
        "window length must be even and at least 2, got {window_len}"
    );
    ensure!(
        hop > 0 && hop <= window_len,
        "hop must satisfy 0 < hop <= window length ({window_len}), got {hop}"
    );
    Ok(())
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(len: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(len),
        inverse: planner.plan_fft_inverse(len),
    }
}

/// Short-time Fourier transform with the sine window.
///
/// The tail is zero-padded so the last partial frame is kept.
pub fn stft(w: &Waveform, window_len: usize, hop: usize) -> Result<ComplexSpectrogram> {
    check_geometry(window_len, hop)?;
    ensure!(!w.is_empty(), "cannot analyse an empty waveform");
    let n_frames = frame_count(w.len(), window_len, hop);
    let bins = window_len / 2 + 1;
    let window = sine_window(window_len);
    let fft = plans(window_len).forward;
    let mut frames = Array2::zeros((n_frames, bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); window_len];
    for n in 0..n_frames {
        let start = n * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let x = w.samples.get(start + i).copied().unwrap_or(0.0);
            *b = Complex64::new(x * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (f, c) in buf[..bins].iter().enumerate() {
            frames[[n, f]] = *c;
        }
    }
    Ok(ComplexSpectrogram {
        frames,
        window_len,
        hop,
        original_len: Some(w.len()),
        sample_rate: w.sample_rate,
    })
}

/// Real inverse DFT of one one-sided frame (imaginary parts of the DC and
/// Nyquist bins are discarded).
fn irfft_frame(frame: ArrayView1<Complex64>, fft: &dyn Fft<f64>, buf: &mut [Complex64]) {
    let len = buf.len();
    let half = len / 2;
    buf[0] = Complex64::new(frame[0].re, 0.0);
    buf[half] = Complex64::new(frame[half].re, 0.0);
    for k in 1..half {
        buf[k] = frame[k];
        buf[len - k] = frame[k].conj();
    }
    fft.process(buf);
    let scale = 1.0 / len as f64;
    for b in buf.iter_mut() {
        *b *= scale;
    }
}

/// Least-squares overlap-add inverse of [`stft`].
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    check_geometry(s.window_len, s.hop)?;
    let bins = s.window_len / 2 + 1;
    ensure!(
        s.n_bins() == bins,
        "frames have {} bins but window length {} implies {}",
        s.n_bins(),
        s.window_len,
        bins
    );
    ensure!(s.n_frames() >= 1, "spectrogram has no frames");
    let window = sine_window(s.window_len);
    let fft = plans(s.window_len).inverse;
    let full_len = (s.n_frames() - 1) * s.hop + s.window_len;
    let mut acc = vec![0.0; full_len];
    let mut norm = vec![0.0; full_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); s.window_len];
    for (n, frame) in s.frames.outer_iter().enumerate() {
        irfft_frame(frame, fft.as_ref(), &mut buf);
        let start = n * s.hop;
        for i in 0..s.window_len {
            acc[start + i] += window[i] * buf[i].re;
            norm[start + i] += window[i] * window[i];
        }
    }
    let out_len = s.original_len.unwrap_or(full_len).min(full_len);
    let samples = acc
        .iter()
        .zip(&norm)
        .take(out_len)
        .map(|(a, n)| a / n)
        .collect();
    Waveform::new(samples, s.sample_rate)
}

pub fn power(s: &ComplexSpectrogram) -> PowerSpectrogram {
    PowerSpectrogram {
        frames: s.frames.mapv(|c| c.norm_sqr()),
    }
}
