use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use num_complex::Complex64;
use rand::RngCore;

use super::mh::{sample_chains, ChainConfig, ChainDraw, LatentChain};
use super::nmf::{m_step_nmf, NmfModel, NMF_FLOOR};
use super::target::{mix_priors, speech_moment, speech_term, LatentTarget};
use crate::dsp::{default_hop, istft, stft, window_len_for_bins, ComplexSpectrogram, Waveform};
use crate::error::{ensure, invalid, Error, Result};
use crate::model::{MinVae, Variant};
use crate::nn::{stream_id, Rng};
use crate::train::{sigmoid, update_pi};

const STREAM_NMF: u64 = 0x4e;
const STREAM_CHAIN: u64 = 0x5a;

/// Where the latent chains start at the first iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LatentInit {
    /// Posterior mean of the visual encoder.
    #[default]
    Visual,
    /// Posterior mean of the audio encoder applied to the noisy power.
    NoisyAudio,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnhanceConfig {
    pub vem_iters: usize,
    pub mh_total: usize,
    pub mh_burnin: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Starting value of the test-time `pi` for mixture models.
    pub init_pi: f64,
    pub latent_init: LatentInit,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            vem_iters: 100,
            mh_total: 40,
            mh_burnin: 30,
            epsilon: 0.01,
            seed: 0,
            init_pi: 0.5,
            latent_init: LatentInit::Visual,
        }
    }
}

impl EnhanceConfig {
    pub fn chain(&self) -> ChainConfig {
        ChainConfig {
            total: self.mh_total,
            burnin: self.mh_burnin,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.vem_iters >= 1, "vem_iters must be at least 1");
        ensure!(
            self.init_pi > 0.0 && self.init_pi < 1.0,
            "init_pi must lie strictly inside (0, 1)"
        );
        self.chain().validate()
    }
}

/// Complex Gaussian posterior of the clean speech, rows are frames.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeechPosterior {
    pub m: Array2<Complex64>,
    pub nu: Array2<f64>,
}

/// Harmonic mean over samples of the speech variances: rows of `variances`
/// are samples, columns bins.
pub fn harmonic_gamma(variances: ArrayView2<f64>) -> Vec<f64> {
    let d = variances.nrows() as f64;
    variances
        .axis_iter(Axis(1))
        .map(|col| d / col.iter().map(|s| 1.0 / s.max(NMF_FLOOR)).sum::<f64>())
        .collect()
}

/// Posterior mean and variance of one frame of speech given the effective
/// speech variance `gamma` and noise variance.
pub fn ve_s(
    x: &[Complex64],
    gamma: &[f64],
    noise_var: &[f64],
) -> Result<(Vec<Complex64>, Vec<f64>)> {
    ensure!(
        x.len() == gamma.len() && x.len() == noise_var.len(),
        "frame lengths differ: {} / {} / {}",
        x.len(),
        gamma.len(),
        noise_var.len()
    );
    let mut m = Vec::with_capacity(x.len());
    let mut nu = Vec::with_capacity(x.len());
    for ((&xf, &g), &w) in x.iter().zip(gamma).zip(noise_var) {
        let denom = (g + w).max(NMF_FLOOR);
        m.push(xf * (g / denom));
        nu.push((g * w / denom).max(NMF_FLOOR));
    }
    Ok((m, nu))
}

/// Responsibility of the audio prior from retained latent samples.
pub fn ve_alpha(log_priors: &[(f64, f64)], pi: f64) -> Result<f64> {
    ensure!(!log_priors.is_empty(), "need at least one latent sample");
    ensure!(pi > 0.0 && pi < 1.0, "pi must lie strictly inside (0, 1)");
    let mean = log_priors.iter().map(|(a, v)| a - v).sum::<f64>() / log_priors.len() as f64;
    Ok(sigmoid(mean + (pi / (1.0 - pi)).ln()))
}

/// [`ve_alpha`] evaluated from raw samples and the model priors.
pub fn ve_alpha_samples(model: &MinVae, samples: &[Vec<f64>], pi: f64) -> Result<f64> {
    let target = LatentTarget::new_priors_only(model);
    let lp: Vec<(f64, f64)> = samples.iter().map(|z| target.log_priors(0, z)).collect();
    ve_alpha(&lp, pi)
}

pub fn update_pi_test(responsibilities: &[f64]) -> Result<f64> {
    update_pi(responsibilities)
}

/// Posterior-mean speech `gamma / (gamma + noise) · x`, rows are frames.
pub fn estimate_speech(
    x: ArrayView2<Complex64>,
    gamma: ArrayView2<f64>,
    noise_var: ArrayView2<f64>,
) -> Result<Array2<Complex64>> {
    ensure!(
        x.dim() == gamma.dim() && x.dim() == noise_var.dim(),
        "shapes differ: {:?} / {:?} / {:?}",
        x.dim(),
        gamma.dim(),
        noise_var.dim()
    );
    let mut out = x.to_owned();
    Zip::from(&mut out)
        .and(gamma)
        .and(noise_var)
        .for_each(|o, &g, &w| *o *= g / (g + w).max(NMF_FLOOR));
    Ok(out)
}

/// Single-frame Metropolis-Hastings run targeting the latent posterior.
#[allow(clippy::too_many_arguments)]
pub fn ve_z_mh(
    model: &MinVae,
    visual: Option<&[f64]>,
    m: &[Complex64],
    nu: &[f64],
    pi_n: f64,
    z_init: &[f64],
    cfg: &ChainConfig,
    rng: &mut Rng,
) -> Result<LatentChain> {
    ensure!(
        z_init.len() == model.dims.latent,
        "initial code has the wrong length"
    );
    let vrow = visual.map(|v| ArrayView2::from_shape((1, v.len()), v).expect("row"));
    let target = LatentTarget::new(model, vrow)?;
    let moment = speech_moment(m, nu);
    let moments = ArrayView2::from_shape((1, moment.len()), &moment).expect("row");
    let z0 = ArrayView2::from_shape((1, z_init.len()), z_init).expect("row");
    let seed = rng.next_u64();
    let mut draws = sample_chains(&target, moments, &[pi_n], z0, cfg, seed, 0)?;
    Ok(draws.remove(0).chain)
}

/// Per-iteration diagnostics of the variational EM.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub iter: usize,
    /// Expected complete-data log-likelihood, up to additive constants.
    pub q_surrogate: f64,
    pub mean_acceptance: f64,
    pub pi: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub iterations: Vec<IterationLog>,
}

impl Diagnostics {
    pub const HEADER: &'static str = "iter\tQ_surrogate\tmean_acceptance\tpi";

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for it in &self.iterations {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                it.iter, it.q_surrogate, it.mean_acceptance, it.pi
            );
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct EnhanceOutput {
    /// Speech estimate, same geometry as the input spectrogram.
    pub speech: ComplexSpectrogram,
    /// Final effective speech variances, `N × F`.
    pub gamma: Array2<f64>,
    pub nmf: NmfModel,
    pub responsibilities: Vec<f64>,
    pub pi: f64,
    pub diagnostics: Diagnostics,
}

/// The fixed test-time `pi` of a non-mixture model.
fn fixed_pi(variant: Variant) -> Option<f64> {
    match variant {
        Variant::AVae | Variant::AvVae => Some(1.0),
        Variant::VVae => Some(0.0),
        Variant::MinV1 | Variant::MinV2 | Variant::MinV3 => None,
    }
}

fn initial_latents(
    model: &MinVae,
    x: ArrayView2<Complex64>,
    visual: Option<ArrayView2<f64>>,
    init: LatentInit,
) -> Result<Array2<f64>> {
    let noisy_audio = || {
        let p = x.mapv(|c| c.norm_sqr());
        model.encode_audio_batch(p.view(), visual).map(|(m, _)| m)
    };
    match init {
        LatentInit::Visual if model.visual_encoder.is_some() => {
            let v =
                visual.ok_or_else(|| invalid!("visual initialisation needs visual features"))?;
            Ok(model.encode_visual_batch(v)?.0)
        }
        LatentInit::Visual | LatentInit::NoisyAudio if model.audio_encoder.is_some() => {
            noisy_audio()
        }
        _ => Err(invalid!(
            "{} cannot initialise latents from {:?}",
            model.variant,
            init
        )),
    }
}

struct Moments {
    gamma: Array2<f64>,
    post: SpeechPosterior,
    moment: Array2<f64>,
}

fn moments(
    x: ArrayView2<Complex64>,
    gamma: Array2<f64>,
    noise_t: ArrayView2<f64>,
) -> Result<Moments> {
    let (n, f) = x.dim();
    let mut m = Array2::zeros((n, f));
    let mut nu = Array2::zeros((n, f));
    for i in 0..n {
        let (mi, ni) = ve_s(
            x.row(i).as_slice().expect("contiguous"),
            gamma.row(i).as_slice().expect("contiguous"),
            &noise_t.row(i).to_vec(),
        )?;
        m.row_mut(i).assign(&ndarray::Array1::from(mi));
        nu.row_mut(i).assign(&ndarray::Array1::from(ni));
    }
    let mut moment = nu.clone();
    Zip::from(&mut moment)
        .and(&m)
        .for_each(|q, c| *q += c.norm_sqr());
    Ok(Moments {
        gamma,
        post: SpeechPosterior { m, nu },
        moment,
    })
}

/// Expected complete-data log-likelihood up to constants.
fn q_surrogate(
    x: ArrayView2<Complex64>,
    mo: &Moments,
    draws: &[ChainDraw],
    noise_t: ArrayView2<f64>,
    pi_n: &[f64],
    pi: f64,
) -> f64 {
    let mut q = 0.0;
    for (i, d) in draws.iter().enumerate() {
        let mrow = mo.moment.row(i);
        let mrow = mrow.as_slice().expect("contiguous");
        let k = d.log_priors.len() as f64;
        for (j, &(la, lv)) in d.log_priors.iter().enumerate() {
            let s = d.variances.row(j);
            q += (speech_term(s.as_slice().expect("row"), mrow) + mix_priors(pi_n[i], la, lv)) / k;
        }
        q += mix_priors(pi_n[i], pi.ln(), (1.0 - pi).ln());
    }
    Zip::from(x)
        .and(&mo.post.m)
        .and(&mo.post.nu)
        .and(noise_t)
        .for_each(|&xv, &m, &nu, &w| q += -((xv - m).norm_sqr() + nu) / w - w.ln());
    q
}

/// Variational EM on a noisy spectrogram with a caller-provided NMF start.
pub fn enhance_spectrogram_with(
    model: &MinVae,
    noisy: &ComplexSpectrogram,
    visual: Option<ArrayView2<f64>>,
    cfg: &EnhanceConfig,
    mut nmf: NmfModel,
) -> Result<EnhanceOutput> {
    cfg.validate()?;
    model.validate()?;
    let x = noisy.frames.view();
    let (n, f) = x.dim();
    ensure!(
        f == model.dims.freq_bins,
        "spectrogram has {f} bins, model expects {}",
        model.dims.freq_bins
    );
    if let Some(v) = visual {
        ensure!(
            v.nrows() == n,
            "visual sequence has {} frames, spectrogram {n}",
            v.nrows()
        );
    }
    ensure!(
        nmf.bins() == f && nmf.frames() == n,
        "NMF start is {} × {}, spectrogram is {f} × {n}",
        nmf.bins(),
        nmf.frames()
    );
    nmf.validate()?;
    let target = LatentTarget::new(model, visual)?;
    let all: Vec<usize> = (0..n).collect();

    let fixed = fixed_pi(model.variant);
    let mut pi = fixed.unwrap_or(cfg.init_pi);
    let mut pi_n = vec![pi; n];
    let mut z = initial_latents(model, x, target.visual(), cfg.latent_init)?;
    let mut noise_t = nmf.variance().t().to_owned();
    let mut mo = moments(x, target.decode(z.view(), &all)?, noise_t.view())?;
    let mut diagnostics = Diagnostics::default();

    for iter in 1..=cfg.vem_iters {
        let draws = sample_chains(
            &target,
            mo.moment.view(),
            &pi_n,
            z.view(),
            &cfg.chain(),
            cfg.seed,
            stream_id(STREAM_CHAIN, iter as u64),
        )?;
        let mut gamma = Array2::zeros((n, f));
        for (i, d) in draws.iter().enumerate() {
            gamma
                .row_mut(i)
                .assign(&ndarray::Array1::from(harmonic_gamma(d.variances.view())));
            z.row_mut(i)
                .assign(&ndarray::ArrayView1::from(d.chain.last()));
        }
        mo = moments(x, gamma, noise_t.view())?;
        if fixed.is_none() {
            for (p, d) in pi_n.iter_mut().zip(&draws) {
                *p = ve_alpha(&d.log_priors, pi)?;
            }
        }

        let mut v = mo.post.nu.clone();
        Zip::from(&mut v)
            .and(x)
            .and(&mo.post.m)
            .for_each(|o, &xv, &m| *o += (xv - m).norm_sqr());
        m_step_nmf(v.t(), &mut nmf)?;
        noise_t = nmf.variance().t().to_owned();
        if fixed.is_none() {
            pi = update_pi_test(&pi_n)?;
        }

        let q = q_surrogate(x, &mo, &draws, noise_t.view(), &pi_n, pi);
        if !q.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite VEM objective at iteration {iter}"
            )));
        }
        let mean_acceptance = draws.iter().map(|d| d.chain.acceptance_rate).sum::<f64>() / n as f64;
        diagnostics.iterations.push(IterationLog {
            iter,
            q_surrogate: q,
            mean_acceptance,
            pi,
        });
    }

    let speech = estimate_speech(x, mo.gamma.view(), noise_t.view())?;
    if speech
        .iter()
        .any(|c| !c.re.is_finite() || !c.im.is_finite())
    {
        return Err(Error::Numerical("non-finite speech estimate".into()));
    }
    Ok(EnhanceOutput {
        speech: ComplexSpectrogram {
            frames: speech,
            ..noisy.clone()
        },
        gamma: mo.gamma,
        nmf,
        responsibilities: pi_n,
        pi,
        diagnostics,
    })
}

/// Random NMF start scaled to the mean noisy power.
pub fn initial_nmf(model: &MinVae, noisy: &ComplexSpectrogram, seed: u64) -> Result<NmfModel> {
    let level =
        noisy.frames.iter().map(|c| c.norm_sqr()).sum::<f64>() / noisy.frames.len().max(1) as f64;
    let mut rng = Rng::stream(seed, stream_id(STREAM_NMF, 0));
    NmfModel::random(
        noisy.n_bins(),
        model.dims.nmf_rank,
        noisy.n_frames(),
        level.max(NMF_FLOOR),
        &mut rng,
    )
}

pub fn enhance_spectrogram(
    model: &MinVae,
    noisy: &ComplexSpectrogram,
    visual: Option<ArrayView2<f64>>,
    cfg: &EnhanceConfig,
) -> Result<EnhanceOutput> {
    let nmf = initial_nmf(model, noisy, cfg.seed)?;
    enhance_spectrogram_with(model, noisy, visual, cfg, nmf)
}

/// Full pipeline: STFT at the model's geometry, variational EM, inverse STFT
/// back to the input length.
pub fn enhance_utterance(
    model: &MinVae,
    noisy: &Waveform,
    visual: Option<ArrayView2<f64>>,
    cfg: &EnhanceConfig,
) -> Result<(Waveform, EnhanceOutput)> {
    let win = window_len_for_bins(model.dims.freq_bins);
    let spec = stft(noisy, win, default_hop(win))?;
    let out = enhance_spectrogram(model, &spec, visual, cfg)?;
    let wave = istft(&out.speech)?;
    Ok((wave, out))
}
