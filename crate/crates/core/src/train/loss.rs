//! Per-batch losses and their gradients.
//!
//! Every loss is the mean over the frames of a batch. The stochastic
//! versions draw one reparameterisation sample per frame; the `_with_noise`
//! versions take the standard-normal draws explicitly so gradients can be
//! compared against finite differences.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use num_complex::Complex64;

use super::kl::kl_bernoulli;
use crate::error::{ensure, invalid, Error, Result};
use crate::model::{MinVae, ModelGrads, Variant};
use crate::nn::{ForwardCache, Mlp, Rng};
use crate::VARIANCE_FLOOR;

/// Which encoder provides the approximate posterior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Posterior {
    /// `alpha = 1`.
    Audio,
    /// `alpha = 0`.
    Visual,
}

impl Posterior {
    pub fn alpha(self) -> bool {
        matches!(self, Posterior::Audio)
    }

    /// The posterior a non-mixture variant is trained with.
    pub fn standard_for(variant: Variant) -> Result<Self> {
        match variant {
            Variant::AVae | Variant::AvVae => Ok(Posterior::Audio),
            Variant::VVae => Ok(Posterior::Visual),
            v => Err(invalid!("{v} has no single standard posterior")),
        }
    }
}

/// Frames fed to a loss.
#[derive(Clone, Debug)]
pub struct FrameBatch {
    /// `|s|²`, the reconstruction targets, `n × F`.
    pub power: Array2<f64>,
    /// Power frames given to the audio encoder. Equal to `power` unless the
    /// input was augmented.
    pub encoder_power: Array2<f64>,
    /// Visual features, `n × M`, for variants that read them.
    pub visual: Option<Array2<f64>>,
}

impl FrameBatch {
    pub fn new(power: Array2<f64>, visual: Option<Array2<f64>>) -> Result<Self> {
        let b = Self {
            encoder_power: power.clone(),
            power,
            visual,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn from_frames(frames: &[Complex64], bins: usize, visual: Option<&[f64]>) -> Result<Self> {
        ensure!(
            bins > 0 && frames.len().is_multiple_of(bins),
            "{} coefficients do not split into frames of {bins} bins",
            frames.len()
        );
        let n = frames.len() / bins;
        let power =
            Array2::from_shape_vec((n, bins), frames.iter().map(|c| c.norm_sqr()).collect())
                .expect("shape checked");
        let visual = match visual {
            Some(v) => {
                ensure!(
                    n > 0 && v.len() % n == 0,
                    "visual features do not split into {n} frames"
                );
                Some(Array2::from_shape_vec((n, v.len() / n), v.to_vec()).expect("shape checked"))
            }
            None => None,
        };
        Self::new(power, visual)
    }

    pub fn len(&self) -> usize {
        self.power.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.is_empty(), "batch has no frames");
        ensure!(
            self.encoder_power.dim() == self.power.dim(),
            "encoder input is {:?}, targets are {:?}",
            self.encoder_power.dim(),
            self.power.dim()
        );
        if let Some(v) = &self.visual {
            ensure!(
                v.nrows() == self.len(),
                "visual rows {} != frames {}",
                v.nrows(),
                self.len()
            );
        }
        ensure!(
            self.power
                .iter()
                .chain(self.encoder_power.iter())
                .all(|&p| p >= 0.0 && p.is_finite()),
            "power frames must be finite and non-negative"
        );
        Ok(())
    }

    /// Rows `idx` of every field.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            power: self.power.select(Axis(0), idx),
            encoder_power: self.encoder_power.select(Axis(0), idx),
            visual: self.visual.as_ref().map(|v| v.select(Axis(0), idx)),
        }
    }

    fn visual_view(&self) -> Option<ArrayView2<'_, f64>> {
        self.visual.as_ref().map(|v| v.view())
    }
}

/// Loss value and gradients for every model parameter except `pi`.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: ModelGrads,
}

enum PriorEval {
    Isotropic {
        mean: Array1<f64>,
        var: f64,
        floored: bool,
    },
    Conditioned {
        cache: ForwardCache,
        mean: Array2<f64>,
        var: Array2<f64>,
    },
}

/// Forward state of one posterior branch over a batch.
struct Branch {
    posterior: Posterior,
    enc_cache: ForwardCache,
    mean: Array2<f64>,
    var: Array2<f64>,
    noise: Array2<f64>,
    dec_cache: ForwardCache,
    prior: PriorEval,
    /// Per-frame `KL(q ‖ p) − log p(s | z)`.
    cost: Vec<f64>,
}

/// Splits raw encoder output into mean and floored variance.
fn gaussian_head(out: &Array2<f64>, latent: usize) -> (Array2<f64>, Array2<f64>) {
    let mean = out.slice(s![.., ..latent]).to_owned();
    let var = out
        .slice(s![.., latent..])
        .mapv(|l| l.exp().max(VARIANCE_FLOOR));
    (mean, var)
}

fn encoder(model: &MinVae, posterior: Posterior) -> Result<&Mlp> {
    match posterior {
        Posterior::Audio => model.audio_encoder.as_ref(),
        Posterior::Visual => model.visual_encoder.as_ref(),
    }
    .ok_or_else(|| invalid!("{} has no {:?} encoder", model.variant, posterior))
}

fn forward_branch(
    model: &MinVae,
    batch: &FrameBatch,
    posterior: Posterior,
    noise: ArrayView2<f64>,
) -> Result<Branch> {
    let l = model.dims.latent;
    let n = batch.len();
    ensure!(
        noise.dim() == (n, l),
        "noise is {:?}, expected {n} × {l}",
        noise.dim()
    );
    let net = encoder(model, posterior)?;
    let vis = batch.visual_view();
    let enc_cache = match posterior {
        Posterior::Audio => net.forward(
            model
                .audio_encoder_input(batch.encoder_power.view(), vis)?
                .view(),
        )?,
        Posterior::Visual => {
            let v = vis.ok_or_else(|| invalid!("the visual encoder needs visual features"))?;
            net.forward(v)?
        }
    };
    let (mean, var) = gaussian_head(enc_cache.output(), l);
    let mut z = mean.clone();
    Zip::from(&mut z)
        .and(&var)
        .and(noise)
        .for_each(|z, &v, &e| *z += v.sqrt() * e);
    let dec_cache = model
        .decoder
        .forward(model.decoder_input(z.view(), vis)?.view())?;

    let prior = match &model.prior_net {
        Some(pn) => {
            let v = vis.ok_or_else(|| invalid!("the conditioned prior needs visual features"))?;
            let cache = pn.forward(v)?;
            let (mean, var) = gaussian_head(cache.output(), l);
            PriorEval::Conditioned { cache, mean, var }
        }
        None => {
            let p = &model.priors;
            let (lv, mean) = if posterior.alpha() {
                (p.log_sigma_a, &p.mu_a)
            } else {
                (p.log_sigma_v, &p.mu_v)
            };
            let var = lv.exp().max(VARIANCE_FLOOR);
            PriorEval::Isotropic {
                mean: mean.clone(),
                var,
                floored: lv.exp() < VARIANCE_FLOOR,
            }
        }
    };

    let sigma = dec_cache.output();
    let mut cost = Vec::with_capacity(n);
    for i in 0..n {
        let mut nll = 0.0;
        for (&p, &sg) in batch.power.row(i).iter().zip(sigma.row(i)) {
            let sg = sg.max(VARIANCE_FLOOR);
            nll += (std::f64::consts::PI * sg).ln() + p / sg;
        }
        let kl = match &prior {
            PriorEval::Isotropic {
                mean: mp, var: vp, ..
            } => {
                let mut acc = l as f64 * vp.ln();
                for k in 0..l {
                    let v = var[[i, k]];
                    let d = mean[[i, k]] - mp[k];
                    acc += -v.ln() - 1.0 + v / vp + d * d / vp;
                }
                0.5 * acc
            }
            PriorEval::Conditioned {
                mean: mp, var: vp, ..
            } => {
                let mut acc = 0.0;
                for k in 0..l {
                    let (v, q) = (var[[i, k]], vp[[i, k]]);
                    let d = mean[[i, k]] - mp[[i, k]];
                    acc += q.ln() - v.ln() - 1.0 + v / q + d * d / q;
                }
                0.5 * acc
            }
        };
        cost.push(kl + nll);
    }
    if let Some(bad) = cost.iter().position(|c| !c.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite loss term for frame {bad} ({posterior:?} posterior)"
        )));
    }
    Ok(Branch {
        posterior,
        enc_cache,
        mean,
        var,
        noise: noise.to_owned(),
        dec_cache,
        prior,
        cost,
    })
}

/// Accumulates `Σ_n weight_n · cost_n` gradients into `grads`.
fn backward_branch(
    model: &MinVae,
    batch: &FrameBatch,
    br: &Branch,
    weights: &[f64],
    grads: &mut ModelGrads,
) -> Result<()> {
    let l = model.dims.latent;
    let n = batch.len();
    let w = Array1::from(weights.to_vec()).insert_axis(Axis(1));

    let raw = br.dec_cache.output();
    let mut d_sigma = Array2::zeros(raw.raw_dim());
    Zip::from(&mut d_sigma)
        .and(raw)
        .and(&batch.power)
        .for_each(|d, &sg, &p| {
            if sg >= VARIANCE_FLOOR {
                *d = 1.0 / sg - p / (sg * sg);
            }
        });
    d_sigma *= &w;
    let (dec_grads, dec_in_grad) = model.decoder.backward(&br.dec_cache, d_sigma.view())?;
    grads.decoder.add_assign(&dec_grads);
    let dz = dec_in_grad.slice(s![.., ..l]).to_owned();

    let raw_logvar = br.enc_cache.output().slice(s![.., l..]).to_owned();
    let mut d_mean = dz.clone();
    let mut d_logvar = Array2::<f64>::zeros((n, l));
    Zip::from(&mut d_logvar)
        .and(&dz)
        .and(&br.noise)
        .and(&br.var)
        .for_each(|d, &g, &e, &v| *d = 0.5 * g * e * v.sqrt());

    match &br.prior {
        PriorEval::Isotropic {
            mean: mp,
            var: vp,
            floored,
        } => {
            let mut d_mu_p = Array1::<f64>::zeros(l);
            let mut d_log_p = 0.0;
            for i in 0..n {
                let wi = weights[i];
                let mut spread = 0.0;
                for k in 0..l {
                    let diff = br.mean[[i, k]] - mp[k];
                    let v = br.var[[i, k]];
                    d_mean[[i, k]] += wi * diff / vp;
                    d_logvar[[i, k]] += wi * 0.5 * (v / vp - 1.0);
                    d_mu_p[k] -= wi * diff / vp;
                    spread += v + diff * diff;
                }
                d_log_p += wi * 0.5 * (l as f64 - spread / vp);
            }
            let pg = &mut grads.priors;
            let (mu, log_sigma) = if br.posterior.alpha() {
                (&mut pg.mu_a, &mut pg.log_sigma_a)
            } else {
                (&mut pg.mu_v, &mut pg.log_sigma_v)
            };
            *mu += &d_mu_p;
            if !floored {
                *log_sigma += d_log_p;
            }
        }
        PriorEval::Conditioned {
            cache,
            mean: mp,
            var: vp,
        } => {
            let mut d_prior = Array2::<f64>::zeros((n, 2 * l));
            let raw_prior = cache.output();
            for i in 0..n {
                let wi = weights[i];
                for k in 0..l {
                    let diff = br.mean[[i, k]] - mp[[i, k]];
                    let (v, q) = (br.var[[i, k]], vp[[i, k]]);
                    d_mean[[i, k]] += wi * diff / q;
                    d_logvar[[i, k]] += wi * 0.5 * (v / q - 1.0);
                    d_prior[[i, k]] = -wi * diff / q;
                    if raw_prior[[i, l + k]].exp() >= VARIANCE_FLOOR {
                        d_prior[[i, l + k]] = wi * 0.5 * (1.0 - (v + diff * diff) / q);
                    }
                }
            }
            let pn = model.prior_net.as_ref().expect("conditioned prior present");
            let (g, _) = pn.backward(cache, d_prior.view())?;
            grads
                .prior_net
                .as_mut()
                .ok_or_else(|| {
                    Error::InvalidState("gradient buffer lacks the prior network".into())
                })?
                .add_assign(&g);
        }
    }

    Zip::from(&mut d_logvar).and(&raw_logvar).for_each(|d, &r| {
        if r.exp() < VARIANCE_FLOOR {
            *d = 0.0;
        }
    });
    let d_enc = concatenate(Axis(1), &[d_mean.view(), d_logvar.view()]).expect("same rows");
    let net = encoder(model, br.posterior)?;
    let (g, _) = net.backward(&br.enc_cache, d_enc.view())?;
    let slot = match br.posterior {
        Posterior::Audio => grads.audio_encoder.as_mut(),
        Posterior::Visual => grads.visual_encoder.as_mut(),
    };
    slot.ok_or_else(|| Error::InvalidState("gradient buffer lacks the encoder".into()))?
        .add_assign(&g);
    Ok(())
}

fn check_grads(g: &ModelGrads) -> Result<()> {
    if g.flatten().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical("non-finite gradient".into()))
    }
}

/// Per-frame `KL(q ‖ p) − log p(s | z)` for one posterior, no gradients.
pub fn branch_costs(
    model: &MinVae,
    batch: &FrameBatch,
    posterior: Posterior,
    noise: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    Ok(forward_branch(model, batch, posterior, noise)?.cost)
}

/// Draws an `n × L` matrix of standard normals.
pub fn draw_noise(rng: &mut Rng, n: usize, latent: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, latent), || rng.normal())
}

/// Negative ELBO averaged over the batch, with explicit reparameterisation
/// noise.
pub fn elbo_standard_with_noise(
    model: &MinVae,
    batch: &FrameBatch,
    posterior: Posterior,
    noise: ArrayView2<f64>,
) -> Result<LossOutput> {
    elbo_split_passes(model, model, batch, posterior, noise)
}

/// Runs the forward pass on `forward_model` and the backward pass on
/// `backward_model`. The two differ only when a test tampers with weights
/// between the passes.
pub(crate) fn elbo_split_passes(
    forward_model: &MinVae,
    backward_model: &MinVae,
    batch: &FrameBatch,
    posterior: Posterior,
    noise: ArrayView2<f64>,
) -> Result<LossOutput> {
    batch.validate()?;
    let br = forward_branch(forward_model, batch, posterior, noise)?;
    let n = batch.len() as f64;
    let loss = br.cost.iter().sum::<f64>() / n;
    let mut grads = ModelGrads::zeros_like(backward_model);
    backward_branch(
        backward_model,
        batch,
        &br,
        &vec![1.0 / n; batch.len()],
        &mut grads,
    )?;
    check_grads(&grads)?;
    Ok(LossOutput { loss, grads })
}

/// Negative ELBO averaged over the batch, one fresh sample per frame.
pub fn elbo_standard_batch(
    model: &MinVae,
    batch: &FrameBatch,
    posterior: Posterior,
    rng: &mut Rng,
) -> Result<LossOutput> {
    let noise = draw_noise(rng, batch.len(), model.dims.latent);
    elbo_standard_with_noise(model, batch, posterior, noise.view())
}

/// Negative ELBO of one frame.
pub fn elbo_standard(
    model: &MinVae,
    posterior: Posterior,
    frame: &[Complex64],
    visual: Option<&[f64]>,
    rng: &mut Rng,
) -> Result<LossOutput> {
    let batch = FrameBatch::from_frames(frame, frame.len(), visual)?;
    elbo_standard_batch(model, &batch, posterior, rng)
}

/// Single-sample `KL(q_alpha ‖ p_alpha) − log p(s | z_alpha)` for one frame.
pub fn j_tilde(
    model: &MinVae,
    frame: &[Complex64],
    visual: Option<&[f64]>,
    posterior: Posterior,
    rng: &mut Rng,
) -> Result<f64> {
    let batch = FrameBatch::from_frames(frame, frame.len(), visual)?;
    let noise = draw_noise(rng, 1, model.dims.latent);
    Ok(branch_costs(model, &batch, posterior, noise.view())?[0])
}

/// `sigmoid(j_visual − j_audio + logit(pi))`.
pub fn update_responsibility(j_visual: f64, j_audio: f64, pi: f64) -> f64 {
    let x = j_visual - j_audio + (pi / (1.0 - pi)).ln();
    sigmoid(x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean of the responsibilities clipped to `[1e-4, 1 − 1e-4]`.
pub fn update_pi(responsibilities: &[f64]) -> Result<f64> {
    ensure!(
        !responsibilities.is_empty(),
        "no responsibilities to average"
    );
    ensure!(
        responsibilities.iter().all(|p| (0.0..=1.0).contains(p)),
        "responsibilities must lie in [0, 1]"
    );
    let mean = responsibilities.iter().sum::<f64>() / responsibilities.len() as f64;
    Ok(mean.clamp(1e-4, 1.0 - 1e-4))
}

/// MIN-VAE loss averaged over the batch with explicit noise for each branch.
///
/// Per frame: `pi_n·J_audio + (1 − pi_n)·J_visual + KL(Bern(pi_n) ‖ Bern(pi))`.
/// A branch whose total weight is zero is skipped.
pub fn minvae_loss_with_noise(
    model: &MinVae,
    batch: &FrameBatch,
    responsibilities: &[f64],
    audio_noise: ArrayView2<f64>,
    visual_noise: ArrayView2<f64>,
) -> Result<LossOutput> {
    minvae_split_passes(
        model,
        model,
        batch,
        responsibilities,
        audio_noise,
        visual_noise,
    )
}

/// [`minvae_loss_with_noise`] with separate models for the two passes, as in
/// [`elbo_split_passes`].
pub(crate) fn minvae_split_passes(
    model: &MinVae,
    backward_model: &MinVae,
    batch: &FrameBatch,
    responsibilities: &[f64],
    audio_noise: ArrayView2<f64>,
    visual_noise: ArrayView2<f64>,
) -> Result<LossOutput> {
    batch.validate()?;
    ensure!(
        model.variant.is_mixture(),
        "{} is not a mixture model",
        model.variant
    );
    ensure!(
        responsibilities.len() == batch.len(),
        "{} responsibilities for {} frames",
        responsibilities.len(),
        batch.len()
    );
    ensure!(
        responsibilities.iter().all(|p| (0.0..=1.0).contains(p)),
        "responsibilities must lie in [0, 1]"
    );
    let n = batch.len() as f64;
    let pi = model.priors.pi;
    let mut grads = ModelGrads::zeros_like(backward_model);
    let mut loss: f64 = responsibilities.iter().map(|&p| kl_bernoulli(p, pi)).sum();

    let wa: Vec<f64> = responsibilities.iter().map(|p| p / n).collect();
    let wv: Vec<f64> = responsibilities.iter().map(|p| (1.0 - p) / n).collect();
    for (posterior, w, noise) in [
        (Posterior::Audio, &wa, audio_noise),
        (Posterior::Visual, &wv, visual_noise),
    ] {
        if w.iter().all(|&x| x == 0.0) {
            continue;
        }
        let br = forward_branch(model, batch, posterior, noise)?;
        loss += br.cost.iter().zip(w).map(|(c, w)| c * w * n).sum::<f64>();
        backward_branch(backward_model, batch, &br, w, &mut grads)?;
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::Numerical("non-finite MIN-VAE loss".into()));
    }
    check_grads(&grads)?;
    Ok(LossOutput { loss, grads })
}

pub fn minvae_loss(
    model: &MinVae,
    batch: &FrameBatch,
    responsibilities: &[f64],
    rng: &mut Rng,
) -> Result<LossOutput> {
    let l = model.dims.latent;
    let ea = draw_noise(rng, batch.len(), l);
    let ev = draw_noise(rng, batch.len(), l);
    minvae_loss_with_noise(model, batch, responsibilities, ea.view(), ev.view())
}
