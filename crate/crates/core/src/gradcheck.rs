//! Finite-difference verification of the training losses.
//!
//! Each suite builds a tiny model, freezes the reparameterisation noise, and
//! compares the analytic gradient of the loss against central differences
//! over every parameter except `pi`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2};

use crate::error::{ensure, invalid, Error, Result};
use crate::model::{MinVae, ModelDims, Variant};
use crate::nn::{stream_id, Rng};
use crate::train::{draw_noise, elbo_split_passes, minvae_split_passes, FrameBatch, Posterior};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Suite {
    /// Negative ELBO of an A-VAE.
    ElboAudio,
    /// Negative ELBO of a V-VAE.
    ElboVisual,
    /// Negative ELBO of an AV-VAE with its conditioned prior.
    ElboJoint,
    /// MIN-VAE loss with a visually conditioned decoder.
    MinV1,
    /// MIN-VAE loss with an audio-only decoder.
    MinV2,
    /// Audio-branch ELBO of a MIN-v3 model.
    MinV3Audio,
    /// Visual-branch ELBO of a MIN-v3 model.
    MinV3Visual,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::ElboAudio,
        Suite::ElboVisual,
        Suite::ElboJoint,
        Suite::MinV1,
        Suite::MinV2,
        Suite::MinV3Audio,
        Suite::MinV3Visual,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Suite::ElboAudio => "elbo-audio",
            Suite::ElboVisual => "elbo-visual",
            Suite::ElboJoint => "elbo-joint",
            Suite::MinV1 => "minvae-v1",
            Suite::MinV2 => "minvae-v2",
            Suite::MinV3Audio => "v3-audio",
            Suite::MinV3Visual => "v3-visual",
        }
    }

    fn variant(self) -> Variant {
        match self {
            Suite::ElboAudio => Variant::AVae,
            Suite::ElboVisual => Variant::VVae,
            Suite::ElboJoint => Variant::AvVae,
            Suite::MinV1 => Variant::MinV1,
            Suite::MinV2 => Variant::MinV2,
            Suite::MinV3Audio | Suite::MinV3Visual => Variant::MinV3,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.tag() == s)
            .ok_or_else(|| invalid!("unknown gradcheck suite {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Central-difference step.
    pub step: f64,
    /// Frames per batch.
    pub frames: usize,
    pub seed: u64,
    /// Perturb a decoder weight between the forward and backward passes
    /// without invalidating the cache; the suite must then fail.
    pub sabotage: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step: 1e-5,
            frames: 6,
            seed: 0,
            sabotage: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub n_params: usize,
    pub max_rel_error: f64,
    pub passed: bool,
    pub seconds: f64,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\tparams={}\tmax_rel_error={:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.n_params,
            self.max_rel_error
        )
    }
}

pub fn tiny_dims() -> ModelDims {
    ModelDims {
        freq_bins: 4,
        latent: 2,
        visual: 3,
        nmf_rank: 1,
        hidden: 5,
    }
}

/// Largest element-wise relative error, with the denominator floored at a
/// thousandth of the largest gradient entry so near-zero entries do not
/// dominate.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

struct Problem {
    model: MinVae,
    batch: FrameBatch,
    responsibilities: Vec<f64>,
    audio_noise: Array2<f64>,
    visual_noise: Array2<f64>,
}

fn build(suite: Suite, cfg: &GradcheckConfig) -> Result<Problem> {
    let d = tiny_dims();
    let mut rng = Rng::stream(cfg.seed, stream_id(0x6763, suite as u64));
    let mut model = MinVae::new(suite.variant(), d, &mut rng)?;
    let p = &mut model.priors;
    p.mu_a = Array1::from(rng.normals(d.latent)).mapv(|v| 0.3 * v);
    p.mu_v = Array1::from(rng.normals(d.latent)).mapv(|v| 0.3 * v);
    p.log_sigma_a = rng.uniform_range(-0.3, 0.3);
    p.log_sigma_v = rng.uniform_range(-0.3, 0.3);
    p.pi = rng.uniform_range(0.2, 0.8);
    let n = cfg.frames;
    let power = Array2::from_shape_simple_fn((n, d.freq_bins), || 0.05 + rng.uniform() * 2.0);
    let visual = Array2::from_shape_simple_fn((n, d.visual), || rng.normal());
    let batch = FrameBatch::new(power, model.variant.needs_visual().then_some(visual))?;
    let responsibilities = (0..n).map(|_| rng.uniform_range(0.05, 0.95)).collect();
    let audio_noise = draw_noise(&mut rng, n, d.latent);
    let visual_noise = draw_noise(&mut rng, n, d.latent);
    Ok(Problem {
        model,
        batch,
        responsibilities,
        audio_noise,
        visual_noise,
    })
}

fn loss_and_grads(
    suite: Suite,
    pb: &Problem,
    model: &MinVae,
    backward: &MinVae,
) -> Result<(f64, Vec<f64>)> {
    let out = match suite {
        Suite::MinV1 | Suite::MinV2 => minvae_split_passes(
            model,
            backward,
            &pb.batch,
            &pb.responsibilities,
            pb.audio_noise.view(),
            pb.visual_noise.view(),
        )?,
        Suite::ElboVisual | Suite::MinV3Visual => elbo_split_passes(
            model,
            backward,
            &pb.batch,
            Posterior::Visual,
            pb.visual_noise.view(),
        )?,
        Suite::ElboAudio | Suite::ElboJoint | Suite::MinV3Audio => elbo_split_passes(
            model,
            backward,
            &pb.batch,
            Posterior::Audio,
            pb.audio_noise.view(),
        )?,
    };
    Ok((out.loss, out.grads.flatten()))
}

/// Runs one suite.
pub fn run_suite(suite: Suite, cfg: &GradcheckConfig) -> Result<SuiteReport> {
    ensure!(
        cfg.step > 0.0 && cfg.tolerance > 0.0,
        "step and tolerance must be positive"
    );
    ensure!(cfg.frames >= 1, "need at least one frame");
    let started = Instant::now();
    let pb = build(suite, cfg)?;

    let analytic = if cfg.sabotage {
        let mut tampered = pb.model.clone();
        for r in 0..tampered.decoder.layers()[0].output_dim() {
            tampered.decoder.perturb_weight_unchecked(0, r, 0, 0.5);
        }
        loss_and_grads(suite, &pb, &pb.model, &tampered)?.1
    } else {
        loss_and_grads(suite, &pb, &pb.model, &pb.model)?.1
    };

    let base = pb.model.params_flat();
    let n_params = base.len() - 1;
    ensure!(
        analytic.len() == n_params,
        "gradient has {} entries for {} parameters",
        analytic.len(),
        n_params
    );
    let mut numeric = Vec::with_capacity(n_params);
    let mut probe = pb.model.clone();
    let mut theta = base.clone();
    for i in 0..n_params {
        let orig = theta[i];
        theta[i] = orig + cfg.step;
        probe.set_params_flat(&theta)?;
        let up = loss_and_grads(suite, &pb, &probe, &probe)?.0;
        theta[i] = orig - cfg.step;
        probe.set_params_flat(&theta)?;
        let down = loss_and_grads(suite, &pb, &probe, &probe)?.0;
        theta[i] = orig;
        numeric.push((up - down) / (2.0 * cfg.step));
    }
    let max_rel_error = max_relative_error(&analytic, &numeric);
    Ok(SuiteReport {
        suite,
        n_params,
        max_rel_error,
        passed: max_rel_error <= cfg.tolerance,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Runs the selected suites in order.
pub fn run_suites(suites: &[Suite], cfg: &GradcheckConfig) -> Result<Vec<SuiteReport>> {
    ensure!(!suites.is_empty(), "no gradcheck suites selected");
    suites.iter().map(|&s| run_suite(s, cfg)).collect()
}
