use ndarray::{Array2, ArrayView2, Axis};
use num_complex::Complex64;

use crate::error::{ensure, invalid, Result};
use crate::model::{gaussian_diag_logpdf, isotropic_logpdf, MinVae};

/// Everything the latent posterior of one utterance depends on besides the
/// speech moments: the model and, when it reads them, the visual features.
pub struct LatentTarget<'a> {
    pub model: &'a MinVae,
    visual: Option<ArrayView2<'a, f64>>,
    conditioned: Option<(Array2<f64>, Array2<f64>)>,
}

impl<'a> LatentTarget<'a> {
    pub fn new(model: &'a MinVae, visual: Option<ArrayView2<'a, f64>>) -> Result<Self> {
        if model.variant.needs_visual() {
            let v = visual.ok_or_else(|| invalid!("{} needs visual features", model.variant))?;
            ensure!(
                v.ncols() == model.dims.visual,
                "visual features have {} entries, model expects {}",
                v.ncols(),
                model.dims.visual
            );
        }
        let conditioned = match (&model.prior_net, visual) {
            (Some(_), Some(v)) => Some(model.conditioned_prior_batch(v)?),
            _ => None,
        };
        Ok(Self {
            model,
            visual: if model.variant.needs_visual() {
                visual
            } else {
                None
            },
            conditioned,
        })
    }

    /// A target that only evaluates the isotropic priors.
    pub fn new_priors_only(model: &'a MinVae) -> Self {
        Self {
            model,
            visual: None,
            conditioned: None,
        }
    }

    pub fn visual(&self) -> Option<ArrayView2<'a, f64>> {
        self.visual
    }

    /// Speech variances for latent rows `z`, where row `r` belongs to frame
    /// `frames[r]`.
    pub fn decode(&self, z: ArrayView2<f64>, frames: &[usize]) -> Result<Array2<f64>> {
        let vis = match self.visual {
            Some(v) if self.model.variant.decoder_uses_visual() => Some(v.select(Axis(0), frames)),
            _ => None,
        };
        self.model
            .decode_variance_batch(z, vis.as_ref().map(|v| v.view()))
    }

    /// `(log p(z | alpha = 1), log p(z | alpha = 0))` at `frame`.
    pub fn log_priors(&self, frame: usize, z: &[f64]) -> (f64, f64) {
        if let Some((mean, var)) = &self.conditioned {
            let m = mean.row(frame);
            let v = var.row(frame);
            let lp =
                gaussian_diag_logpdf(z, m.as_slice().expect("row"), v.as_slice().expect("row"));
            return (lp, lp);
        }
        let p = &self.model.priors;
        (
            isotropic_logpdf(z, p.mu_a.as_slice().expect("contiguous"), p.sigma_a()),
            isotropic_logpdf(z, p.mu_v.as_slice().expect("contiguous"), p.sigma_v()),
        )
    }
}

/// `Σ_f [−log σ_f − moment_f / σ_f]`, the speech part of the latent target,
/// where `moment = |m|² + ν`.
pub fn speech_term(variance: &[f64], moment: &[f64]) -> f64 {
    variance
        .iter()
        .zip(moment)
        .map(|(s, q)| -s.ln() - q / s)
        .sum()
}

/// `|m|² + ν` per bin.
pub fn speech_moment(m: &[Complex64], nu: &[f64]) -> Vec<f64> {
    m.iter().zip(nu).map(|(m, n)| m.norm_sqr() + n).collect()
}

/// Unnormalised log density of the latent posterior of one frame.
pub fn log_rz_unnorm(
    model: &MinVae,
    z: &[f64],
    m: &[Complex64],
    nu: &[f64],
    pi_n: f64,
    visual: Option<&[f64]>,
) -> Result<f64> {
    ensure!(m.len() == nu.len(), "mean and variance lengths differ");
    ensure!(
        nu.iter().all(|&v| v > 0.0),
        "posterior variances must be positive"
    );
    let sigma = model.decode_variance(z, visual)?;
    ensure!(
        sigma.len() == m.len(),
        "frame has {} bins, model {}",
        m.len(),
        sigma.len()
    );
    let vrow = visual.map(|v| ArrayView2::from_shape((1, v.len()), v).expect("row"));
    let target = LatentTarget::new(model, vrow)?;
    let (la, lv) = target.log_priors(0, z);
    Ok(speech_term(&sigma, &speech_moment(m, nu)) + mix_priors(pi_n, la, lv))
}

/// `pi_n·la + (1 − pi_n)·lv`, dropping a term whose weight is exactly zero.
pub(crate) fn mix_priors(pi_n: f64, la: f64, lv: f64) -> f64 {
    let a = if pi_n > 0.0 { pi_n * la } else { 0.0 };
    let v = if pi_n < 1.0 { (1.0 - pi_n) * lv } else { 0.0 };
    a + v
}
