//! The speech models: A-VAE, V-VAE, AV-VAE and the three MIN-VAE variants,
//! all represented by one bundle of networks plus prior parameters.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use num_complex::Complex64;

use crate::error::{ensure, invalid, Error, Result};
use crate::nn::{Activation, Mlp, MlpGrads, Rng};
use crate::VARIANCE_FLOOR;

/// Floor added to powers before the log-compression of the audio encoder
/// input.
pub const LOG_POWER_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Audio-only encoder, standard decoder.
    AVae,
    /// Visual-only encoder, standard decoder.
    VVae,
    /// Joint encoder, visually conditioned decoder and prior.
    AvVae,
    /// Mixture of encoders, decoder sees the visual features.
    MinV1,
    /// Mixture of encoders, audio-only decoder.
    MinV2,
    /// Audio and visual encoders trained alternately on a shared decoder.
    MinV3,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::AVae,
        Variant::VVae,
        Variant::AvVae,
        Variant::MinV1,
        Variant::MinV2,
        Variant::MinV3,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::AVae => "a-vae",
            Variant::VVae => "v-vae",
            Variant::AvVae => "av-vae",
            Variant::MinV1 => "min-v1",
            Variant::MinV2 => "min-v2",
            Variant::MinV3 => "min-v3",
        }
    }

    pub fn has_audio_encoder(self) -> bool {
        !matches!(self, Variant::VVae)
    }

    pub fn has_visual_encoder(self) -> bool {
        matches!(
            self,
            Variant::VVae | Variant::MinV1 | Variant::MinV2 | Variant::MinV3
        )
    }

    pub fn has_prior_net(self) -> bool {
        matches!(self, Variant::AvVae)
    }

    /// Whether the decoder input is `[z; v]` rather than `z`.
    pub fn decoder_uses_visual(self) -> bool {
        matches!(self, Variant::AvVae | Variant::MinV1)
    }

    /// Whether the audio encoder input is `[s; v]`.
    pub fn audio_encoder_uses_visual(self) -> bool {
        matches!(self, Variant::AvVae)
    }

    pub fn is_mixture(self) -> bool {
        matches!(self, Variant::MinV1 | Variant::MinV2 | Variant::MinV3)
    }

    /// Whether any part of the model reads visual features.
    pub fn needs_visual(self) -> bool {
        self.has_visual_encoder() || self.decoder_uses_visual() || self.has_prior_net()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| {
                invalid!(
                    "unknown variant {s:?}; expected one of a-vae, v-vae, av-vae, min-v1, min-v2, min-v3"
                )
            })
    }
}

/// Sizes shared by all networks of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    /// STFT bins, F.
    pub freq_bins: usize,
    /// Latent dimension, L.
    pub latent: usize,
    /// Visual feature dimension, M.
    pub visual: usize,
    /// NMF rank used at enhancement time, K.
    pub nmf_rank: usize,
    /// Width of the single hidden layer of every network.
    pub hidden: usize,
}

impl ModelDims {
    /// 513 bins, L = 32, M = 128, K = 10, 128 hidden units.
    pub fn audio_default() -> Self {
        Self {
            freq_bins: 513,
            latent: 32,
            visual: 128,
            nmf_rank: 10,
            hidden: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.freq_bins >= 2, "need at least 2 frequency bins");
        ensure!(
            self.latent >= 1 && self.visual >= 1 && self.nmf_rank >= 1 && self.hidden >= 1,
            "all model dimensions must be at least 1"
        );
        Ok(())
    }
}

/// Learnable audio/visual prior parameters and the mixing weight.
///
/// The isotropic variances are stored as logs for unconstrained
/// optimisation; [`MixturePriorParams::sigma_a`] and friends apply the floor.
#[derive(Clone, Debug, PartialEq)]
pub struct MixturePriorParams {
    pub mu_a: Array1<f64>,
    pub log_sigma_a: f64,
    pub mu_v: Array1<f64>,
    pub log_sigma_v: f64,
    pub pi: f64,
}

impl MixturePriorParams {
    /// Both components standard normal, `pi = 0.5`.
    pub fn standard(latent: usize) -> Self {
        Self {
            mu_a: Array1::zeros(latent),
            log_sigma_a: 0.0,
            mu_v: Array1::zeros(latent),
            log_sigma_v: 0.0,
            pi: 0.5,
        }
    }

    pub fn sigma_a(&self) -> f64 {
        self.log_sigma_a.exp().max(VARIANCE_FLOOR)
    }

    pub fn sigma_v(&self) -> f64 {
        self.log_sigma_v.exp().max(VARIANCE_FLOOR)
    }

    /// Mean and isotropic variance of the component selected by `alpha`
    /// (`true` = audio).
    pub fn component(&self, alpha: bool) -> (&Array1<f64>, f64) {
        if alpha {
            (&self.mu_a, self.sigma_a())
        } else {
            (&self.mu_v, self.sigma_v())
        }
    }

    pub(crate) fn clamp(&mut self) {
        let lo = VARIANCE_FLOOR.ln();
        self.log_sigma_a = self.log_sigma_a.max(lo);
        self.log_sigma_v = self.log_sigma_v.max(lo);
        self.pi = self.pi.clamp(1e-4, 1.0 - 1e-4);
    }
}

/// Diagonal Gaussian produced by an encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Splits an `n × 2L` encoder output into its mean and floored variance.
pub fn split_gaussian(out: &Array2<f64>, latent: usize) -> (Array2<f64>, Array2<f64>) {
    let mean = out.slice(s![.., ..latent]).to_owned();
    let var = out
        .slice(s![.., latent..])
        .mapv(|l| l.exp().max(VARIANCE_FLOOR));
    (mean, var)
}

/// Audio encoder features: log-compressed power.
pub fn log_power(power: ArrayView2<f64>) -> Array2<f64> {
    power.mapv(|p| (p + LOG_POWER_FLOOR).ln())
}

/// The trainable parts of a model, used to group optimiser state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    AudioEncoder,
    VisualEncoder,
    PriorNet,
    Decoder,
    /// `mu_a` and `log_sigma_a`.
    AudioPrior,
    /// `mu_v` and `log_sigma_v`.
    VisualPrior,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::AudioEncoder,
        Component::VisualEncoder,
        Component::PriorNet,
        Component::Decoder,
        Component::AudioPrior,
        Component::VisualPrior,
    ];
}

/// Gradients of the learnable prior parameters (`pi` is updated in closed
/// form and has none).
#[derive(Clone, Debug, PartialEq)]
pub struct PriorGrads {
    pub mu_a: Array1<f64>,
    pub log_sigma_a: f64,
    pub mu_v: Array1<f64>,
    pub log_sigma_v: f64,
}

impl PriorGrads {
    pub fn zeros(latent: usize) -> Self {
        Self {
            mu_a: Array1::zeros(latent),
            log_sigma_a: 0.0,
            mu_v: Array1::zeros(latent),
            log_sigma_v: 0.0,
        }
    }

    pub fn audio(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.mu_a.to_vec();
        v.push(self.log_sigma_a);
        v
    }

    pub fn visual(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.mu_v.to_vec();
        v.push(self.log_sigma_v);
        v
    }
}

/// Gradients for every component of a [`MinVae`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub audio_encoder: Option<MlpGrads>,
    pub visual_encoder: Option<MlpGrads>,
    pub prior_net: Option<MlpGrads>,
    pub decoder: MlpGrads,
    pub priors: PriorGrads,
}

impl ModelGrads {
    pub fn zeros_like(m: &MinVae) -> Self {
        Self {
            audio_encoder: m.audio_encoder.as_ref().map(MlpGrads::zeros_like),
            visual_encoder: m.visual_encoder.as_ref().map(MlpGrads::zeros_like),
            prior_net: m.prior_net.as_ref().map(MlpGrads::zeros_like),
            decoder: MlpGrads::zeros_like(&m.decoder),
            priors: PriorGrads::zeros(m.dims.latent),
        }
    }

    pub fn component(&self, c: Component) -> Option<Vec<f64>> {
        match c {
            Component::AudioEncoder => self.audio_encoder.as_ref().map(MlpGrads::flatten),
            Component::VisualEncoder => self.visual_encoder.as_ref().map(MlpGrads::flatten),
            Component::PriorNet => self.prior_net.as_ref().map(MlpGrads::flatten),
            Component::Decoder => Some(self.decoder.flatten()),
            Component::AudioPrior => Some(self.priors.audio()),
            Component::VisualPrior => Some(self.priors.visual()),
        }
    }

    /// All gradients concatenated in component order.
    pub fn flatten(&self) -> Vec<f64> {
        Component::ALL
            .iter()
            .filter_map(|&c| self.component(c))
            .flatten()
            .collect()
    }
}

/// A speech VAE: encoders, decoder, and priors.
///
/// Which networks are present depends on [`Variant`]; see
/// [`Variant::has_audio_encoder`] and friends. Encoders output `2L` values:
/// the posterior mean followed by the log-variance. The decoder ends in an
/// exponential head producing the `F` speech variances.
#[derive(Clone, Debug, PartialEq)]
pub struct MinVae {
    pub variant: Variant,
    pub dims: ModelDims,
    pub audio_encoder: Option<Mlp>,
    pub visual_encoder: Option<Mlp>,
    /// Visually conditioned prior of the AV-VAE.
    pub prior_net: Option<Mlp>,
    pub decoder: Mlp,
    pub priors: MixturePriorParams,
}

/// Layer widths of every network in a model, input first.
struct Shapes {
    audio_encoder: Option<[usize; 3]>,
    visual_encoder: Option<[usize; 3]>,
    prior_net: Option<[usize; 3]>,
    decoder: [usize; 3],
}

const ENCODER_ACTS: [Activation; 2] = [Activation::Tanh, Activation::Identity];
const DECODER_ACTS: [Activation; 2] = [Activation::Tanh, Activation::Exp];

fn shapes(variant: Variant, d: &ModelDims) -> Shapes {
    let audio_in = if variant.audio_encoder_uses_visual() {
        d.freq_bins + d.visual
    } else {
        d.freq_bins
    };
    let dec_in = if variant.decoder_uses_visual() {
        d.latent + d.visual
    } else {
        d.latent
    };
    Shapes {
        audio_encoder: variant
            .has_audio_encoder()
            .then_some([audio_in, d.hidden, 2 * d.latent]),
        visual_encoder: variant
            .has_visual_encoder()
            .then_some([d.visual, d.hidden, 2 * d.latent]),
        prior_net: variant
            .has_prior_net()
            .then_some([d.visual, d.hidden, 2 * d.latent]),
        decoder: [dec_in, d.hidden, d.freq_bins],
    }
}

impl MinVae {
    /// Randomly initialised model with standard-normal priors and `pi = 0.5`.
    pub fn new(variant: Variant, dims: ModelDims, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        let sh = shapes(variant, &dims);
        let mut enc = |s: Option<[usize; 3]>| s.map(|s| Mlp::glorot(&s, &ENCODER_ACTS, rng));
        let audio_encoder = enc(sh.audio_encoder);
        let visual_encoder = enc(sh.visual_encoder);
        let prior_net = enc(sh.prior_net);
        let decoder = Mlp::glorot(&sh.decoder, &DECODER_ACTS, rng);
        Ok(Self {
            variant,
            dims,
            audio_encoder,
            visual_encoder,
            prior_net,
            decoder,
            priors: MixturePriorParams::standard(dims.latent),
        })
    }

    /// All-zero weights: encoders output N(0, I), the decoder outputs ones.
    pub fn zeros(variant: Variant, dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let sh = shapes(variant, &dims);
        let enc = |s: Option<[usize; 3]>| s.map(|s| Mlp::zeros(&s, &ENCODER_ACTS));
        Ok(Self {
            variant,
            dims,
            audio_encoder: enc(sh.audio_encoder),
            visual_encoder: enc(sh.visual_encoder),
            prior_net: enc(sh.prior_net),
            decoder: Mlp::zeros(&sh.decoder, &DECODER_ACTS),
            priors: MixturePriorParams::standard(dims.latent),
        })
    }

    /// Checks that every network has the shape the variant and dims imply.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let sh = shapes(self.variant, &self.dims);
        let check = |name: &str, net: Option<&Mlp>, want: Option<[usize; 3]>| -> Result<()> {
            match (net, want) {
                (None, None) => Ok(()),
                (Some(n), Some(w)) => {
                    let dims: Vec<usize> = std::iter::once(n.input_dim())
                        .chain(n.layers().iter().map(|l| l.output_dim()))
                        .collect();
                    ensure!(
                        dims == w,
                        "{name} has layer widths {dims:?}, expected {w:?}"
                    );
                    Ok(())
                }
                (Some(_), None) => Err(invalid!("{} has no {name}", self.variant)),
                (None, Some(_)) => Err(invalid!("{} requires a {name}", self.variant)),
            }
        };
        check(
            "audio encoder",
            self.audio_encoder.as_ref(),
            sh.audio_encoder,
        )?;
        check(
            "visual encoder",
            self.visual_encoder.as_ref(),
            sh.visual_encoder,
        )?;
        check("prior network", self.prior_net.as_ref(), sh.prior_net)?;
        check("decoder", Some(&self.decoder), Some(sh.decoder))?;
        ensure!(
            self.priors.mu_a.len() == self.dims.latent
                && self.priors.mu_v.len() == self.dims.latent,
            "prior means must have {} entries",
            self.dims.latent
        );
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.dims.latent
    }

    pub fn component_net(&self, c: Component) -> Option<&Mlp> {
        match c {
            Component::AudioEncoder => self.audio_encoder.as_ref(),
            Component::VisualEncoder => self.visual_encoder.as_ref(),
            Component::PriorNet => self.prior_net.as_ref(),
            Component::Decoder => Some(&self.decoder),
            Component::AudioPrior | Component::VisualPrior => None,
        }
    }

    pub fn has_component(&self, c: Component) -> bool {
        matches!(c, Component::AudioPrior | Component::VisualPrior)
            || self.component_net(c).is_some()
    }

    /// Flat parameters of one component. Prior blocks are the mean followed
    /// by the log-variance; `pi` belongs to no component.
    pub fn component_params(&self, c: Component) -> Option<Vec<f64>> {
        let p = &self.priors;
        match c {
            Component::AudioPrior => {
                let mut v: Vec<f64> = p.mu_a.to_vec();
                v.push(p.log_sigma_a);
                Some(v)
            }
            Component::VisualPrior => {
                let mut v: Vec<f64> = p.mu_v.to_vec();
                v.push(p.log_sigma_v);
                Some(v)
            }
            _ => self.component_net(c).map(Mlp::params_flat),
        }
    }

    pub fn set_component_params(&mut self, c: Component, params: &[f64]) -> Result<()> {
        match c {
            Component::AudioEncoder => self.audio_encoder.as_mut(),
            Component::VisualEncoder => self.visual_encoder.as_mut(),
            Component::PriorNet => self.prior_net.as_mut(),
            Component::Decoder => Some(&mut self.decoder),
            Component::AudioPrior | Component::VisualPrior => {
                let l = self.dims.latent;
                ensure!(
                    params.len() == l + 1,
                    "prior block needs {} values, got {}",
                    l + 1,
                    params.len()
                );
                let p = &mut self.priors;
                let (mu, log_sigma) = if c == Component::AudioPrior {
                    (&mut p.mu_a, &mut p.log_sigma_a)
                } else {
                    (&mut p.mu_v, &mut p.log_sigma_v)
                };
                *mu = Array1::from(params[..l].to_vec());
                *log_sigma = params[l];
                p.clamp();
                return Ok(());
            }
        }
        .ok_or_else(|| invalid!("{} has no {:?}", self.variant, c))?
        .set_params_flat(params)
    }

    /// Every parameter in checkpoint order: networks (audio encoder, visual
    /// encoder, prior network, decoder, whichever exist), then the prior
    /// block, then `pi`.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = Component::ALL
            .iter()
            .filter_map(|&c| self.component_params(c))
            .flatten()
            .collect();
        v.push(self.priors.pi);
        v
    }

    pub fn n_params(&self) -> usize {
        self.params_flat().len()
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        ensure!(
            params.len() == self.n_params(),
            "model expects {} parameters, got {}",
            self.n_params(),
            params.len()
        );
        let mut offset = 0;
        for c in Component::ALL {
            if let Some(cur) = self.component_params(c) {
                let n = cur.len();
                self.set_component_params(c, &params[offset..offset + n])?;
                offset += n;
            }
        }
        self.priors.pi = params[offset];
        Ok(())
    }

    fn require_visual<'a>(&self, v: Option<&'a [f64]>) -> Result<Option<&'a [f64]>> {
        if let Some(v) = v {
            ensure!(
                v.len() == self.dims.visual,
                "visual feature has {} entries, model expects {}",
                v.len(),
                self.dims.visual
            );
        }
        Ok(v)
    }

    /// Audio encoder input rows for a batch of power frames (plus visual
    /// features for the AV-VAE).
    pub fn audio_encoder_input(
        &self,
        power: ArrayView2<f64>,
        visual: Option<ArrayView2<f64>>,
    ) -> Result<Array2<f64>> {
        ensure!(
            power.ncols() == self.dims.freq_bins,
            "power frames have {} bins, model expects {}",
            power.ncols(),
            self.dims.freq_bins
        );
        let feats = log_power(power);
        if self.variant.audio_encoder_uses_visual() {
            let v = visual.ok_or_else(|| invalid!("{} needs visual features", self.variant))?;
            ensure!(
                v.nrows() == power.nrows(),
                "visual and audio frame counts differ"
            );
            Ok(concatenate(Axis(1), &[feats.view(), v]).expect("row counts checked"))
        } else {
            Ok(feats)
        }
    }

    /// Decoder input rows `z` or `[z; v]`.
    pub fn decoder_input(
        &self,
        z: ArrayView2<f64>,
        visual: Option<ArrayView2<f64>>,
    ) -> Result<Array2<f64>> {
        ensure!(
            z.ncols() == self.dims.latent,
            "latent codes have {} entries, model expects {}",
            z.ncols(),
            self.dims.latent
        );
        if self.variant.decoder_uses_visual() {
            let v =
                visual.ok_or_else(|| invalid!("{} decoder needs visual features", self.variant))?;
            ensure!(
                v.nrows() == z.nrows() && v.ncols() == self.dims.visual,
                "visual features are {:?}, expected {} × {}",
                v.dim(),
                z.nrows(),
                self.dims.visual
            );
            Ok(concatenate(Axis(1), &[z, v]).expect("row counts checked"))
        } else {
            Ok(z.to_owned())
        }
    }

    /// Speech variances for a batch of latent codes, `n × F`, floored.
    pub fn decode_variance_batch(
        &self,
        z: ArrayView2<f64>,
        visual: Option<ArrayView2<f64>>,
    ) -> Result<Array2<f64>> {
        let input = self.decoder_input(z, visual)?;
        Ok(self
            .decoder
            .predict(input.view())?
            .mapv(|s| s.max(VARIANCE_FLOOR)))
    }

    /// Speech variance vector for one frame. `v` is ignored unless the
    /// decoder is visually conditioned.
    pub fn decode_variance(&self, z: &[f64], v: Option<&[f64]>) -> Result<Vec<f64>> {
        let v = self.require_visual(v)?;
        let zr = ArrayView2::from_shape((1, z.len()), z).expect("row");
        let vr = v.map(|v| ArrayView2::from_shape((1, v.len()), v).expect("row"));
        Ok(self
            .decode_variance_batch(zr, vr)?
            .into_raw_vec_and_offset()
            .0)
    }

    fn encode_with(&self, net: &Mlp, input: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let out = net.predict(input)?;
        Ok(split_gaussian(&out, self.dims.latent))
    }

    /// Audio encoder posteriors for a batch; rows are frames.
    pub fn encode_audio_batch(
        &self,
        power: ArrayView2<f64>,
        visual: Option<ArrayView2<f64>>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let net = self
            .audio_encoder
            .as_ref()
            .ok_or_else(|| invalid!("{} has no audio encoder", self.variant))?;
        let input = self.audio_encoder_input(power, visual)?;
        self.encode_with(net, input.view())
    }

    pub fn encode_visual_batch(
        &self,
        visual: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let net = self
            .visual_encoder
            .as_ref()
            .ok_or_else(|| invalid!("{} has no visual encoder", self.variant))?;
        ensure!(
            visual.ncols() == self.dims.visual,
            "visual features have {} entries, model expects {}",
            visual.ncols(),
            self.dims.visual
        );
        self.encode_with(net, visual)
    }

    /// q(z | s) from the audio encoder for one power frame.
    pub fn encode_audio(&self, s_pow: &[f64]) -> Result<EncoderOutput> {
        ensure!(
            !self.variant.audio_encoder_uses_visual(),
            "the {} encoder needs visual features; use encode_joint",
            self.variant
        );
        self.encode_joint(s_pow, None)
    }

    /// Audio encoder for one frame, with visual features for the AV-VAE.
    pub fn encode_joint(&self, s_pow: &[f64], v: Option<&[f64]>) -> Result<EncoderOutput> {
        ensure!(
            s_pow.iter().all(|&p| p >= 0.0),
            "power frame entries must be non-negative"
        );
        let v = self.require_visual(v)?;
        let p = ArrayView2::from_shape((1, s_pow.len()), s_pow).expect("row");
        let vr = v.map(|v| ArrayView2::from_shape((1, v.len()), v).expect("row"));
        let (m, var) = self.encode_audio_batch(p, vr)?;
        Ok(EncoderOutput {
            mean: m.into_raw_vec_and_offset().0,
            variance: var.into_raw_vec_and_offset().0,
        })
    }

    /// q(z | v) from the visual encoder for one frame.
    pub fn encode_visual(&self, v: &[f64]) -> Result<EncoderOutput> {
        let v = ArrayView2::from_shape((1, v.len()), v).expect("row");
        let (m, var) = self.encode_visual_batch(v)?;
        Ok(EncoderOutput {
            mean: m.into_raw_vec_and_offset().0,
            variance: var.into_raw_vec_and_offset().0,
        })
    }

    /// Visually conditioned prior of the AV-VAE for a batch.
    pub fn conditioned_prior_batch(
        &self,
        visual: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let net = self
            .prior_net
            .as_ref()
            .ok_or_else(|| invalid!("{} has no conditioned prior", self.variant))?;
        self.encode_with(net, visual)
    }

    /// log q(z | s, v) under the inference mixture with audio weight `pi_n`.
    pub fn mixture_posterior_logpdf(
        &self,
        z: &[f64],
        s_pow: &[f64],
        v: &[f64],
        pi_n: f64,
    ) -> Result<f64> {
        ensure!(
            (0.0..=1.0).contains(&pi_n),
            "pi_n must lie in [0, 1], got {pi_n}"
        );
        let qa = self.encode_audio(s_pow)?;
        let qv = self.encode_visual(v)?;
        let la = gaussian_diag_logpdf(z, &qa.mean, &qa.variance);
        let lv = gaussian_diag_logpdf(z, &qv.mean, &qv.variance);
        Ok(log_sum_exp2(pi_n.ln() + la, (1.0 - pi_n).ln() + lv))
    }
}

/// `log(e^a + e^b)` tolerating infinite arguments.
pub fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Σ_f [ −log(π σ_f) − |s_f|² / σ_f ] for a proper complex Gaussian frame.
pub fn loglik_complex_gaussian(s: &[Complex64], variance: &[f64]) -> Result<f64> {
    ensure!(
        s.len() == variance.len(),
        "frame has {} bins, variance {}",
        s.len(),
        variance.len()
    );
    let power: Vec<f64> = s.iter().map(|c| c.norm_sqr()).collect();
    loglik_power(&power, variance)
}

/// [`loglik_complex_gaussian`] written in terms of `|s_f|²`.
pub fn loglik_power(power: &[f64], variance: &[f64]) -> Result<f64> {
    ensure!(
        power.len() == variance.len(),
        "frame has {} bins, variance {}",
        power.len(),
        variance.len()
    );
    ensure!(
        variance.iter().all(|&v| v > 0.0),
        "variances must be positive"
    );
    Ok(power
        .iter()
        .zip(variance)
        .map(|(p, v)| -(PI * v).ln() - p / v)
        .sum())
}

/// Log density of the isotropic prior selected by `alpha` (`true` = audio).
pub fn prior_logpdf(p: &MixturePriorParams, z: &[f64], alpha: bool) -> f64 {
    let (mu, sigma) = p.component(alpha);
    isotropic_logpdf(z, mu.as_slice().expect("contiguous"), sigma)
}

pub fn isotropic_logpdf(z: &[f64], mean: &[f64], variance: f64) -> f64 {
    let l = z.len() as f64;
    let sq: f64 = z.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * l * (2.0 * PI * variance).ln() - 0.5 * sq / variance
}

pub fn gaussian_diag_logpdf(z: &[f64], mean: &[f64], variance: &[f64]) -> f64 {
    z.iter()
        .zip(mean)
        .zip(variance)
        .map(|((x, m), v)| -0.5 * (2.0 * PI * v).ln() - 0.5 * (x - m) * (x - m) / v)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant) -> ModelDims {
        let _ = variant;
        ModelDims {
            freq_bins: 4,
            latent: 2,
            visual: 3,
            nmf_rank: 2,
            hidden: 5,
        }
    }

    #[test]
    fn variant_tags_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.tag().parse::<Variant>().unwrap(), v);
        }
        assert!("min-v4".parse::<Variant>().is_err());
    }

    #[test]
    fn zero_decoder_gives_unit_variance() {
        let m = MinVae::zeros(Variant::MinV2, tiny(Variant::MinV2)).unwrap();
        assert_eq!(m.decode_variance(&[0.3, -0.2], None).unwrap(), vec![1.0; 4]);
        let e = m.encode_audio(&[1.0, 2.0, 0.0, 3.0]).unwrap();
        assert_eq!(e.mean, vec![0.0; 2]);
        assert_eq!(e.variance, vec![1.0; 2]);
        let e = m.encode_visual(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(e.variance, vec![1.0; 2]);
    }

    #[test]
    fn v2_decoder_ignores_visual() {
        let mut rng = Rng::new(3);
        let m = MinVae::new(Variant::MinV2, tiny(Variant::MinV2), &mut rng).unwrap();
        let z = [0.4, -1.1];
        let a = m.decode_variance(&z, Some(&[1.0, 2.0, 3.0])).unwrap();
        let b = m.decode_variance(&z, Some(&[-9.0, 0.0, 7.0])).unwrap();
        let c = m.decode_variance(&z, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn v1_decoder_requires_visual() {
        let mut rng = Rng::new(3);
        let m = MinVae::new(Variant::MinV1, tiny(Variant::MinV1), &mut rng).unwrap();
        assert!(m.decode_variance(&[0.0, 0.0], None).is_err());
        let a = m
            .decode_variance(&[0.0, 0.0], Some(&[1.0, 2.0, 3.0]))
            .unwrap();
        let b = m
            .decode_variance(&[0.0, 0.0], Some(&[-1.0, 2.0, 3.0]))
            .unwrap();
        assert_ne!(a, b);
        assert!(m
            .decode_variance(&[0.0, 0.0, 1.0], Some(&[1.0, 2.0, 3.0]))
            .is_err());
    }

    /// Straight-line re-evaluation of affine → tanh → affine → exp.
    #[allow(clippy::needless_range_loop)]
    fn reference_decoder(m: &MinVae, z: &[f64]) -> Vec<f64> {
        let l0 = &m.decoder.layers()[0];
        let l1 = &m.decoder.layers()[1];
        let mut h = vec![0.0; l0.output_dim()];
        for i in 0..h.len() {
            let mut acc = l0.bias[i];
            for j in 0..z.len() {
                acc += l0.weights[[i, j]] * z[j];
            }
            h[i] = acc.tanh();
        }
        (0..l1.output_dim())
            .map(|f| {
                let mut acc = l1.bias[f];
                for (j, hj) in h.iter().enumerate() {
                    acc += l1.weights[[f, j]] * hj;
                }
                acc.exp().max(VARIANCE_FLOOR)
            })
            .collect()
    }

    #[test]
    fn decoder_matches_reference_chain() {
        let mut rng = Rng::new(21);
        let m = MinVae::new(Variant::MinV2, tiny(Variant::MinV2), &mut rng).unwrap();
        for _ in 0..10 {
            let z = rng.normals(2);
            let got = m.decode_variance(&z, None).unwrap();
            let want = reference_decoder(&m, &z);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-14 * b.abs());
            }
        }
    }

    #[test]
    fn audio_encoder_matches_reference_chain() {
        let mut rng = Rng::new(22);
        let m = MinVae::new(Variant::AVae, tiny(Variant::AVae), &mut rng).unwrap();
        let net = m.audio_encoder.as_ref().unwrap();
        let p = [0.5, 2.0, 0.01, 7.0];
        let x: Vec<f64> = p.iter().map(|v| (v + LOG_POWER_FLOOR).ln()).collect();
        let (l0, l1) = (&net.layers()[0], &net.layers()[1]);
        let h: Vec<f64> = (0..l0.output_dim())
            .map(|i| (l0.bias[i] + (0..4).map(|j| l0.weights[[i, j]] * x[j]).sum::<f64>()).tanh())
            .collect();
        let out: Vec<f64> = (0..4)
            .map(|o| {
                l1.bias[o]
                    + h.iter()
                        .enumerate()
                        .map(|(j, hj)| l1.weights[[o, j]] * hj)
                        .sum::<f64>()
            })
            .collect();
        let e = m.encode_audio(&p).unwrap();
        for k in 0..2 {
            assert!((e.mean[k] - out[k]).abs() < 1e-14);
            assert!((e.variance[k] - out[2 + k].exp()).abs() < 1e-14 * e.variance[k]);
        }
        assert_eq!(e, m.encode_audio(&p).unwrap());
    }

    #[test]
    fn variances_are_positive() {
        let mut rng = Rng::new(5);
        let m = MinVae::new(Variant::MinV2, tiny(Variant::MinV2), &mut rng).unwrap();
        for _ in 0..100 {
            let z: Vec<f64> = rng.normals(2).iter().map(|v| v * 50.0).collect();
            assert!(m
                .decode_variance(&z, None)
                .unwrap()
                .iter()
                .all(|&v| v >= VARIANCE_FLOOR));
            let p: Vec<f64> = rng.normals(4).iter().map(|v| v.abs() * 1e3).collect();
            assert!(m
                .encode_audio(&p)
                .unwrap()
                .variance
                .iter()
                .all(|&v| v >= VARIANCE_FLOOR));
        }
    }

    #[test]
    fn complex_loglik_values() {
        let f = 5;
        let zero = vec![Complex64::new(0.0, 0.0); f];
        let ll = loglik_complex_gaussian(&zero, &vec![1.0; f]).unwrap();
        assert!((ll + f as f64 * PI.ln()).abs() < 1e-12);
        let one = [Complex64::new(0.6, 0.8)];
        let ll = loglik_complex_gaussian(&one, &[1.0]).unwrap();
        assert!((ll - (-PI.ln() - 1.0)).abs() < 1e-12);
        assert!((ll + 2.1447).abs() < 1e-4);
        assert!(loglik_complex_gaussian(&one, &[0.0]).is_err());
        assert!(loglik_complex_gaussian(&one, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn complex_loglik_scaling_identity() {
        let mut rng = Rng::new(8);
        let s: Vec<Complex64> = (0..6)
            .map(|_| Complex64::new(rng.normal(), rng.normal()))
            .collect();
        let var: Vec<f64> = (0..6).map(|_| 0.1 + rng.uniform()).collect();
        let c = Complex64::new(1.7, -0.4);
        let scaled: Vec<Complex64> = s.iter().map(|x| x * c).collect();
        let var_scaled: Vec<f64> = var.iter().map(|v| v * c.norm_sqr()).collect();
        let a = loglik_complex_gaussian(&s, &var).unwrap();
        let b = loglik_complex_gaussian(&scaled, &var_scaled).unwrap();
        assert!((b - a + 6.0 * c.norm_sqr().ln()).abs() < 1e-10);
    }

    #[test]
    fn loglik_maximised_at_power() {
        let p = 2.3;
        let best = loglik_power(&[p], &[p]).unwrap();
        for k in 1..200 {
            let v = k as f64 * 0.05;
            assert!(loglik_power(&[p], &[v]).unwrap() <= best + 1e-15);
        }
    }

    #[test]
    fn prior_logpdf_values() {
        let mut p = MixturePriorParams::standard(2);
        let v = prior_logpdf(&p, &[1.0, 1.0], true);
        assert!((v - (-(2.0 * PI).ln() - 1.0)).abs() < 1e-12);
        assert!((v + 2.8379).abs() < 1e-4);
        assert_eq!(v, prior_logpdf(&p, &[1.0, 1.0], false));
        p.mu_a = Array1::from(vec![0.3, -0.4]);
        p.log_sigma_a = 0.7f64.ln();
        let at_mode = prior_logpdf(&p, &[0.3, -0.4], true);
        assert!((at_mode - (-(2.0 * PI * 0.7).ln())).abs() < 1e-12);
    }

    #[test]
    fn mixture_posterior_limits_and_value() {
        let mut rng = Rng::new(13);
        let m = MinVae::new(Variant::MinV2, tiny(Variant::MinV2), &mut rng).unwrap();
        let s = [0.4, 1.3, 0.2, 2.2];
        let v = [0.1, -0.5, 0.3];
        let z = [0.2, -0.1];
        let qa = m.encode_audio(&s).unwrap();
        let qv = m.encode_visual(&v).unwrap();
        let la = gaussian_diag_logpdf(&z, &qa.mean, &qa.variance);
        let lv = gaussian_diag_logpdf(&z, &qv.mean, &qv.variance);
        assert!((m.mixture_posterior_logpdf(&z, &s, &v, 1.0).unwrap() - la).abs() < 1e-12);
        assert!((m.mixture_posterior_logpdf(&z, &s, &v, 0.0).unwrap() - lv).abs() < 1e-12);
        let direct = (0.5 * la.exp() + 0.5 * lv.exp()).ln();
        assert!((m.mixture_posterior_logpdf(&z, &s, &v, 0.5).unwrap() - direct).abs() < 1e-12);
        assert!(m.mixture_posterior_logpdf(&z, &s, &v, 1.5).is_err());
    }

    #[test]
    fn params_roundtrip_for_all_variants() {
        let mut rng = Rng::new(6);
        for variant in Variant::ALL {
            let d = tiny(variant);
            let m = MinVae::new(variant, d, &mut rng).unwrap();
            m.validate().unwrap();
            let p = m.params_flat();
            let mut z = MinVae::zeros(variant, d).unwrap();
            z.set_params_flat(&p).unwrap();
            assert_eq!(z, m);
        }
    }
}
