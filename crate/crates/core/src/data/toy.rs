use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::dsp::{
    default_hop, istft, sine_window, stft, window_len_for_bins, ComplexSpectrogram, Waveform,
};
use crate::error::{ensure, Result};
use crate::nn::{stream_id, Rng};
use crate::train::TrainingSet;

pub const TOY_SAMPLE_RATE: u32 = 16_000;

const STREAM_TRUTH: u64 = 0x54;
const STREAM_UTTERANCE: u64 = 0x55;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpusSpec {
    pub n_utterances: usize,
    pub frames_per_utterance: usize,
    pub freq_bins: usize,
    pub latent: usize,
    pub visual: usize,
    /// 1 gives `v = C·z`, 0 gives features independent of `z`.
    pub visual_informativeness: f64,
    pub seed: u64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self {
            n_utterances: 50,
            frames_per_utterance: 200,
            freq_bins: 64,
            latent: 8,
            visual: 8,
            visual_informativeness: 1.0,
            seed: 0,
        }
    }
}

impl ToyCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_utterances >= 1
                && self.frames_per_utterance >= 1
                && self.latent >= 1
                && self.visual >= 1,
            "corpus dimensions must be at least 1"
        );
        ensure!(self.freq_bins >= 2, "need at least 2 frequency bins");
        ensure!(
            (0.0..=1.0).contains(&self.visual_informativeness),
            "visual informativeness must lie in [0, 1]"
        );
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        window_len_for_bins(self.freq_bins)
    }

    pub fn hop(&self) -> usize {
        default_hop(self.window_len())
    }

    /// Samples per utterance: exactly `frames_per_utterance` STFT frames.
    pub fn samples_per_utterance(&self) -> usize {
        (self.frames_per_utterance - 1) * self.hop() + self.window_len()
    }
}

/// The generative parameters behind a toy corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub mu_a: Array1<f64>,
    pub sigma_a: f64,
    pub mu_v: Array1<f64>,
    pub sigma_v: f64,
    /// Probability that a frame's code comes from the audio component.
    pub pi: f64,
    /// `F × L` log-variance map.
    pub a: Array2<f64>,
    /// `F` log-variance offsets.
    pub b: Array1<f64>,
    /// `M × L` visual map.
    pub c: Array2<f64>,
}

/// Standard deviation of `A·z` per bin for unit-variance codes, in nats.
const LOG_VARIANCE_SPREAD: f64 = 2.5;
/// Number of cosine terms shaping each column of `A`.
const SPECTRAL_TERMS: usize = 5;
/// Probability that consecutive frames share the same prior component.
const COMPONENT_PERSISTENCE: f64 = 0.9;
/// Lag-one correlation of the standardised latent trajectory.
const LATENT_CORRELATION: f64 = 0.8;

impl GroundTruth {
    fn draw(spec: &ToyCorpusSpec, rng: &mut Rng) -> Self {
        let (f, l, m) = (spec.freq_bins, spec.latent, spec.visual);
        let sl = (l as f64).sqrt();
        // Smooth spectral envelopes: each latent moves a low-order cosine
        // series over frequency.
        let mut a = Array2::zeros((f, l));
        for k in 0..l {
            let coef: Vec<f64> = (0..SPECTRAL_TERMS).map(|_| rng.normal()).collect();
            let phase: Vec<f64> = (0..SPECTRAL_TERMS)
                .map(|_| rng.uniform() * std::f64::consts::PI)
                .collect();
            for fi in 0..f {
                let x = (fi as f64 + 0.5) / f as f64;
                a[[fi, k]] = (0..SPECTRAL_TERMS)
                    .map(|j| coef[j] * (std::f64::consts::PI * (j + 1) as f64 * x + phase[j]).cos())
                    .sum::<f64>();
            }
        }
        let rms = (a.iter().map(|v| v * v).sum::<f64>() / f as f64).sqrt();
        a.mapv_inplace(|v| v * LOG_VARIANCE_SPREAD / rms);
        let tilt = rng.uniform_range(1.0, 3.0);
        let b = Array1::from_shape_fn(f, |fi| -tilt * fi as f64 / f as f64);
        Self {
            mu_a: Array1::from_shape_simple_fn(l, || 0.5 * rng.normal()),
            sigma_a: 1.0,
            mu_v: Array1::from_shape_simple_fn(l, || 0.5 * rng.normal()),
            sigma_v: 0.5,
            pi: 0.5,
            a,
            b,
            c: Array2::from_shape_simple_fn((m, l), || rng.normal() / sl),
        }
    }

    /// `exp(A·z + b)` for rows of `z`.
    pub fn speech_variance(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut lv = z.dot(&self.a.t());
        lv += &self.b;
        lv.mapv(f64::exp)
    }
}

#[derive(Clone, Debug)]
pub struct ToyUtterance {
    pub id: String,
    pub clean: Waveform,
    /// STFT of `clean`.
    pub spectrogram: ComplexSpectrogram,
    /// `N × M`.
    pub visual: Array2<f64>,
    /// `N × L` latent codes.
    pub z: Array2<f64>,
    /// Whether each frame's code came from the audio component.
    pub alpha: Vec<bool>,
    /// Generating variances `exp(A·z + b)`, `N × F`. Each clean frame also
    /// picks up energy from its neighbours, so `oracle_variance` is the
    /// exact second moment of `spectrogram`.
    pub variance: Array2<f64>,
    /// Variance of the coefficients of `spectrogram`, accounting for the
    /// synthesis/analysis round trip, `N × F`.
    pub oracle_variance: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub spec: ToyCorpusSpec,
    pub truth: GroundTruth,
    pub utterances: Vec<ToyUtterance>,
}

impl ToyCorpus {
    /// Pooled frames of the utterances in `range`.
    pub fn training_set(&self, range: std::ops::Range<usize>) -> Result<TrainingSet> {
        ensure!(
            range.start < range.end && range.end <= self.utterances.len(),
            "utterance range {range:?} outside 0..{}",
            self.utterances.len()
        );
        let utts = &self.utterances[range];
        let frames: Vec<_> = utts.iter().map(|u| u.spectrogram.frames.view()).collect();
        let visual: Vec<_> = utts.iter().map(|u| u.visual.view()).collect();
        TrainingSet::new(
            ndarray::concatenate(ndarray::Axis(0), &frames).expect("equal widths"),
            Some(ndarray::concatenate(ndarray::Axis(0), &visual).expect("equal widths")),
        )
    }
}

/// Per-lag energy transfer of an istft → stft round trip: entry
/// `[lag][out_bin][in_bin]` is the output power at `out_bin`, `lag` frames
/// later, caused by a unit-variance proper complex coefficient at `in_bin`.
pub struct RoundTripKernel {
    span: usize,
    weights: Vec<Array2<f64>>,
}

impl RoundTripKernel {
    pub fn new(window_len: usize, hop: usize) -> Result<Self> {
        let bins = window_len / 2 + 1;
        let span = (window_len - 1) / hop;
        let frames = 4 * span + 1;
        let centre = 2 * span;
        let mut weights = vec![Array2::zeros((bins, bins)); 2 * span + 1];
        for fi in 0..bins {
            let parts: &[Complex64] = if fi == 0 || fi == bins - 1 {
                &[Complex64::new(1.0, 0.0)]
            } else {
                &[Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)]
            };
            for &unit in parts {
                let mut s = ComplexSpectrogram {
                    frames: Array2::zeros((frames, bins)),
                    window_len,
                    hop,
                    original_len: None,
                    sample_rate: TOY_SAMPLE_RATE,
                };
                s.frames[[centre, fi]] = unit;
                let back = stft(&istft(&s)?, window_len, hop)?;
                for (k, w) in weights.iter_mut().enumerate() {
                    let n = centre + k - span;
                    for fo in 0..bins {
                        // Real and imaginary parts each carry half the variance.
                        w[[fo, fi]] += 0.5 * back.frames[[n, fo]].norm_sqr();
                    }
                }
            }
        }
        Ok(Self { span, weights })
    }

    /// Expected `|STFT(istft(s))|²` for independent coefficients with
    /// variances `variance` (`N × F`). Frames near the edges use the
    /// interior kernel, which is exact only away from the signal edges.
    pub fn apply(&self, variance: &Array2<f64>) -> Array2<f64> {
        let (n, _) = variance.dim();
        let mut out = Array2::zeros(variance.raw_dim());
        for (k, w) in self.weights.iter().enumerate() {
            // Output frame t receives input frame t − (k − span).
            let lag = k as isize - self.span as isize;
            for t in 0..n {
                let src = t as isize - lag;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let contrib = w.dot(&variance.row(src as usize));
                let mut row = out.row_mut(t);
                row += &contrib;
            }
        }
        out
    }
}

/// Draws a corpus whose latent codes, speech variances and visual features
/// follow known parameters.
pub fn generate_toy_corpus(spec: &ToyCorpusSpec) -> Result<ToyCorpus> {
    spec.validate()?;
    let truth = GroundTruth::draw(
        spec,
        &mut Rng::stream(spec.seed, stream_id(STREAM_TRUTH, 0)),
    );
    let (win, hop) = (spec.window_len(), spec.hop());
    let kernel = RoundTripKernel::new(win, hop)?;
    let utterances = (0..spec.n_utterances)
        .into_par_iter()
        .map(|u| {
            let mut rng = Rng::stream(spec.seed, stream_id(STREAM_UTTERANCE, u as u64));
            generate_utterance(spec, &truth, &kernel, u, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ToyCorpus {
        spec: spec.clone(),
        truth,
        utterances,
    })
}

fn generate_utterance(
    spec: &ToyCorpusSpec,
    truth: &GroundTruth,
    kernel: &RoundTripKernel,
    index: usize,
    rng: &mut Rng,
) -> Result<ToyUtterance> {
    let (n, l, f) = (spec.frames_per_utterance, spec.latent, spec.freq_bins);
    let (win, hop) = (spec.window_len(), spec.hop());
    // Synthesise `pad` extra frames on each side and keep only the interior,
    // where the overlap-add normalisation is exact.
    let pad = kernel.span;
    let total = n + 2 * pad;
    // Frames switch component rarely and the standardised codes follow a
    // stationary AR(1) path, so each frame's code is still distributed as
    // the mixture prior.
    let mut z_all = Array2::zeros((total, l));
    let mut alpha_all = Vec::with_capacity(total);
    let mut audio = rng.uniform() < truth.pi;
    let mut u: Vec<f64> = rng.normals(l);
    let innovation = (1.0 - LATENT_CORRELATION * LATENT_CORRELATION).sqrt();
    for t in 0..total {
        if t > 0 {
            if rng.uniform() >= COMPONENT_PERSISTENCE {
                audio = rng.uniform() < truth.pi;
            }
            for uk in u.iter_mut() {
                *uk = LATENT_CORRELATION * *uk + innovation * rng.normal();
            }
        }
        let (mu, var) = if audio {
            (&truth.mu_a, truth.sigma_a)
        } else {
            (&truth.mu_v, truth.sigma_v)
        };
        for k in 0..l {
            z_all[[t, k]] = mu[k] + var.sqrt() * u[k];
        }
        alpha_all.push(audio);
    }
    let variance_all = truth.speech_variance(&z_all);
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let raw = Array2::from_shape_fn((total, f), |(t, k)| {
        let s = variance_all[[t, k]].sqrt() * half;
        Complex64::new(s * rng.normal(), s * rng.normal())
    });
    let long = istft(&ComplexSpectrogram {
        frames: raw,
        window_len: win,
        hop,
        original_len: None,
        sample_rate: TOY_SAMPLE_RATE,
    })?;
    let offset = pad * hop;
    let clean = Waveform::new(
        long.samples[offset..offset + spec.samples_per_utterance()].to_vec(),
        TOY_SAMPLE_RATE,
    )?;
    let spectrogram = stft(&clean, win, hop)?;
    debug_assert_eq!(spectrogram.n_frames(), n);

    let keep = pad..pad + n;
    let z = z_all.slice(ndarray::s![keep.clone(), ..]).to_owned();
    let variance = variance_all.slice(ndarray::s![keep.clone(), ..]).to_owned();
    let oracle_variance = kernel
        .apply(&variance_all)
        .slice(ndarray::s![keep.clone(), ..])
        .to_owned();

    let info = spec.visual_informativeness;
    let cz = z.dot(&truth.c.t());
    let visual = Array2::from_shape_fn((n, spec.visual), |(t, k)| {
        let noise = rng.normal();
        info * cz[[t, k]] + (1.0 - info) * noise
    });
    Ok(ToyUtterance {
        id: format!("utt{index:04}"),
        clean,
        spectrogram,
        visual,
        z,
        alpha: alpha_all[keep].to_vec(),
        variance,
        oracle_variance,
    })
}

/// Unit-variance white Gaussian noise of `len` samples.
pub fn white_noise(len: usize, rng: &mut Rng) -> Result<Waveform> {
    Waveform::new(rng.normals(len), TOY_SAMPLE_RATE)
}

/// Expected `|STFT|²` per frame of white noise with unit sample variance:
/// the window energy that falls inside the signal.
pub fn white_noise_frame_energy(len: usize, window_len: usize, hop: usize) -> Vec<f64> {
    let w = sine_window(window_len);
    let n = crate::dsp::frame_count(len, window_len, hop);
    (0..n)
        .map(|t| {
            w.iter()
                .enumerate()
                .filter(|(i, _)| t * hop + i < len)
                .map(|(_, v)| v * v)
                .sum()
        })
        .collect()
}
