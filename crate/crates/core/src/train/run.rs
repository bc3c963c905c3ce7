//! Training loops for every variant.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use super::augment::{augment_audio_input, NoiseInjection};
use super::loss::{
    branch_costs, draw_noise, elbo_standard_batch, minvae_loss, update_pi, update_responsibility,
    FrameBatch, LossOutput, Posterior,
};
use crate::error::{ensure, invalid, Error, Result};
use crate::model::{Component, MinVae, ModelDims, ModelGrads, Variant};
use crate::nn::{stream_id, AdamState, Rng};

const STREAM_AUGMENT: u64 = 0x41;
const STREAM_RESPONSIBILITY: u64 = 0x52;
const STREAM_MINIBATCH: u64 = 0x4d;

/// Frames used for responsibility passes, kept small enough to parallelise.
const RESPONSIBILITY_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub noise_injection: NoiseInjection,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-4,
            noise_injection: NoiseInjection::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1, "epochs must be at least 1");
        ensure!(self.batch_size >= 1, "batch size must be at least 1");
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning rate must be positive"
        );
        self.noise_injection.validate()
    }
}

/// Pooled STFT frames of a training corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    /// `N × F` clean speech coefficients.
    pub frames: Array2<Complex64>,
    /// `N × M` visual features aligned with `frames`.
    pub visual: Option<Array2<f64>>,
}

impl TrainingSet {
    pub fn new(frames: Array2<Complex64>, visual: Option<Array2<f64>>) -> Result<Self> {
        ensure!(frames.nrows() > 0, "training set has no frames");
        if let Some(v) = &visual {
            ensure!(
                v.nrows() == frames.nrows(),
                "{} visual rows for {} frames",
                v.nrows(),
                frames.nrows()
            );
        }
        Ok(Self { frames, visual })
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn power(&self) -> Array2<f64> {
        self.frames.mapv(|c| c.norm_sqr())
    }

    fn check_model(&self, model: &MinVae) -> Result<()> {
        ensure!(
            self.frames.ncols() == model.dims.freq_bins,
            "training frames have {} bins, model expects {}",
            self.frames.ncols(),
            model.dims.freq_bins
        );
        if model.variant.needs_visual() {
            let v = self
                .visual
                .as_ref()
                .ok_or_else(|| invalid!("{} training needs visual features", model.variant))?;
            ensure!(
                v.ncols() == model.dims.visual,
                "visual features have {} entries, model expects {}",
                v.ncols(),
                model.dims.visual
            );
        }
        Ok(())
    }
}

/// Resumable optimiser state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainState {
    /// Index of the next epoch to run.
    pub next_epoch: usize,
    pub optimizers: BTreeMap<Component, AdamState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub pi: f64,
    pub mean_pi_n: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub const HEADER: &'static str = "epoch\tmean_loss\tpi\tmean_pi_n\twall_seconds";

    /// Tab-separated, one line per epoch after a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.3}",
                e.epoch, e.mean_loss, e.pi, e.mean_pi_n, e.wall_seconds
            );
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        ensure!(
            lines.next() == Some(Self::HEADER),
            "training log lacks the expected header"
        );
        let mut epochs = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let cols: Vec<&str> = line.split('\t').collect();
            ensure!(
                cols.len() == 5,
                "log line {} has {} columns",
                i + 2,
                cols.len()
            );
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| invalid!("log line {}: {e}", i + 2))
            };
            epochs.push(EpochLog {
                epoch: cols[0]
                    .parse()
                    .map_err(|e| invalid!("log line {}: {e}", i + 2))?,
                mean_loss: num(cols[1])?,
                pi: num(cols[2])?,
                mean_pi_n: num(cols[3])?,
                wall_seconds: num(cols[4])?,
            });
        }
        Ok(Self { epochs })
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: MinVae,
    pub log: TrainingLog,
    pub state: TrainState,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] Error),
    /// The loss or a gradient became non-finite. `last_good` is the model as
    /// it was at the start of the failing epoch.
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        last_good: Box<MinVae>,
        log: TrainingLog,
        state: Box<TrainState>,
    },
}

impl From<TrainError> for Error {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Core(e) => e,
            d @ TrainError::Diverged { .. } => Error::Numerical(d.to_string()),
        }
    }
}

/// Responsibilities for every frame of `batch`, one fresh sample per branch.
pub fn compute_responsibilities(
    model: &MinVae,
    batch: &FrameBatch,
    seed: u64,
    stream: u64,
) -> Result<Vec<f64>> {
    let n = batch.len();
    let l = model.dims.latent;
    let pi = model.priors.pi;
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(RESPONSIBILITY_CHUNK)
        .map(|s| (s, (s + RESPONSIBILITY_CHUNK).min(n)))
        .collect();
    let parts: Vec<Result<Vec<f64>>> = chunks
        .par_iter()
        .enumerate()
        .map(|(ci, &(a, b))| {
            let mut rng = Rng::stream(seed, stream_id(stream, ci as u64));
            let idx: Vec<usize> = (a..b).collect();
            let sub = batch.select(&idx);
            let ea = draw_noise(&mut rng, idx.len(), l);
            let ev = draw_noise(&mut rng, idx.len(), l);
            let ja = branch_costs(model, &sub, Posterior::Audio, ea.view())?;
            let jv = branch_costs(model, &sub, Posterior::Visual, ev.view())?;
            Ok(jv
                .iter()
                .zip(&ja)
                .map(|(&j0, &j1)| update_responsibility(j0, j1, pi))
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn apply_step(
    model: &mut MinVae,
    grads: &ModelGrads,
    optim: &mut BTreeMap<Component, AdamState>,
    components: &[Component],
    learning_rate: f64,
) -> Result<()> {
    for &c in components {
        let (Some(g), Some(mut p)) = (grads.component(c), model.component_params(c)) else {
            continue;
        };
        let adam = optim
            .entry(c)
            .or_insert_with(|| AdamState::new(p.len(), learning_rate));
        adam.step(&mut p, &g)?;
        model.set_component_params(c, &p)?;
    }
    Ok(())
}

/// What one epoch optimises.
struct EpochPlan {
    components: Vec<Component>,
    kind: EpochKind,
}

enum EpochKind {
    Standard(Posterior),
    Mixture,
}

/// Shared epoch loop: augmentation, optional responsibility pass,
/// minibatch Adam steps, and the `pi` update.
fn run_epochs(
    mut model: MinVae,
    set: &TrainingSet,
    cfg: &TrainConfig,
    state: Option<TrainState>,
    plan_for: impl Fn(usize) -> EpochPlan,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    model.validate()?;
    set.check_model(&model)?;
    let mut state = state.unwrap_or_default();
    let mut log = TrainingLog::default();
    let power = set.power();
    let visual = if model.variant.needs_visual() {
        set.visual.clone()
    } else {
        None
    };

    for epoch in state.next_epoch..cfg.epochs {
        let started = Instant::now();
        let last_good = model.clone();
        let last_state = state.clone();
        let plan = plan_for(epoch);
        let e = epoch as u64;

        let mut aug_rng = Rng::stream(cfg.seed, stream_id(STREAM_AUGMENT, e));
        let augment = matches!(
            plan.kind,
            EpochKind::Mixture | EpochKind::Standard(Posterior::Audio)
        );
        let encoder_power = if augment {
            augment_audio_input(set.frames.view(), &cfg.noise_injection, &mut aug_rng)?
                .encoder_power
        } else {
            power.clone()
        };
        let full = FrameBatch {
            power: power.clone(),
            encoder_power,
            visual: visual.clone(),
        };

        let diverged = |reason: String, log: &TrainingLog| TrainError::Diverged {
            epoch,
            reason,
            last_good: Box::new(last_good.clone()),
            log: log.clone(),
            state: Box::new(last_state.clone()),
        };

        let responsibilities = match plan.kind {
            EpochKind::Mixture => {
                match compute_responsibilities(
                    &model,
                    &full,
                    cfg.seed,
                    stream_id(STREAM_RESPONSIBILITY, e),
                ) {
                    Ok(r) => Some(r),
                    Err(Error::Numerical(m)) => return Err(diverged(m, &log)),
                    Err(err) => return Err(err.into()),
                }
            }
            EpochKind::Standard(_) => None,
        };

        let mut rng = Rng::stream(cfg.seed, stream_id(STREAM_MINIBATCH, e));
        let mut order: Vec<usize> = (0..set.len()).collect();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let sub = full.select(idx);
            let step: Result<LossOutput> = match (&plan.kind, &responsibilities) {
                (EpochKind::Mixture, Some(r)) => {
                    let rn: Vec<f64> = idx.iter().map(|&i| r[i]).collect();
                    minvae_loss(&model, &sub, &rn, &mut rng)
                }
                (EpochKind::Standard(p), _) => elbo_standard_batch(&model, &sub, *p, &mut rng),
                (EpochKind::Mixture, None) => unreachable!("responsibilities computed above"),
            };
            let out = match step {
                Ok(o) => o,
                Err(Error::Numerical(m)) => return Err(diverged(m, &log)),
                Err(err) => return Err(err.into()),
            };
            match apply_step(
                &mut model,
                &out.grads,
                &mut state.optimizers,
                &plan.components,
                cfg.learning_rate,
            ) {
                Ok(()) => {}
                Err(Error::Numerical(m)) => return Err(diverged(m, &log)),
                Err(err) => return Err(err.into()),
            }
            total += out.loss;
            batches += 1;
        }

        let mean_pi_n = match (&plan.kind, &responsibilities) {
            (EpochKind::Mixture, Some(r)) => {
                model.priors.pi = update_pi(r)?;
                r.iter().sum::<f64>() / r.len() as f64
            }
            (EpochKind::Standard(p), _) => {
                if p.alpha() {
                    1.0
                } else {
                    0.0
                }
            }
            _ => unreachable!(),
        };
        let mean_loss = total / batches as f64;
        if !mean_loss.is_finite() || model.params_flat().iter().any(|v| !v.is_finite()) {
            return Err(diverged("non-finite parameters after epoch".into(), &log));
        }
        state.next_epoch = epoch + 1;
        log.epochs.push(EpochLog {
            epoch,
            mean_loss,
            pi: model.priors.pi,
            mean_pi_n,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutput { model, log, state })
}

/// Standard ELBO training of an A-VAE, V-VAE or AV-VAE. Priors stay at their
/// initial values.
pub fn train_standard(
    model: MinVae,
    set: &TrainingSet,
    cfg: &TrainConfig,
    state: Option<TrainState>,
) -> Result<TrainOutput, TrainError> {
    let posterior = Posterior::standard_for(model.variant)?;
    let components = vec![
        Component::AudioEncoder,
        Component::VisualEncoder,
        Component::PriorNet,
        Component::Decoder,
    ];
    run_epochs(model, set, cfg, state, move |_| EpochPlan {
        components: components.clone(),
        kind: EpochKind::Standard(posterior),
    })
}

/// Alternating responsibility / parameter / `pi` training of MIN-v1 and
/// MIN-v2.
pub fn train_minvae(
    model: MinVae,
    set: &TrainingSet,
    cfg: &TrainConfig,
    state: Option<TrainState>,
) -> Result<TrainOutput, TrainError> {
    ensure!(
        matches!(model.variant, Variant::MinV1 | Variant::MinV2),
        "train_minvae expects min-v1 or min-v2, got {}",
        model.variant
    );
    run_epochs(model, set, cfg, state, |_| EpochPlan {
        components: vec![
            Component::AudioEncoder,
            Component::VisualEncoder,
            Component::Decoder,
            Component::AudioPrior,
            Component::VisualPrior,
        ],
        kind: EpochKind::Mixture,
    })
}

/// MIN-v3: even epochs train the audio encoder, odd epochs the visual
/// encoder, both with the shared decoder. The idle encoder is untouched.
pub fn train_v3(
    model: MinVae,
    set: &TrainingSet,
    cfg: &TrainConfig,
    state: Option<TrainState>,
) -> Result<TrainOutput, TrainError> {
    ensure!(
        model.variant == Variant::MinV3,
        "train_v3 expects min-v3, got {}",
        model.variant
    );
    run_epochs(model, set, cfg, state, |epoch| {
        let (enc, posterior) = if epoch % 2 == 0 {
            (Component::AudioEncoder, Posterior::Audio)
        } else {
            (Component::VisualEncoder, Posterior::Visual)
        };
        EpochPlan {
            components: vec![enc, Component::Decoder],
            kind: EpochKind::Standard(posterior),
        }
    })
}

/// Dispatches on the model variant.
pub fn train(
    model: MinVae,
    set: &TrainingSet,
    cfg: &TrainConfig,
    state: Option<TrainState>,
) -> Result<TrainOutput, TrainError> {
    match model.variant {
        Variant::AVae | Variant::VVae | Variant::AvVae => train_standard(model, set, cfg, state),
        Variant::MinV1 | Variant::MinV2 => train_minvae(model, set, cfg, state),
        Variant::MinV3 => train_v3(model, set, cfg, state),
    }
}

/// Builds a MIN-VAE from pretrained single-modality models: the audio encoder
/// from `audio`, the visual encoder from `visual`, and the decoder from
/// `decoder_source`. Priors start standard and `pi = 0.5`.
pub fn init_from_pretrained(
    variant: Variant,
    dims: ModelDims,
    audio: &MinVae,
    visual: &MinVae,
    decoder_source: &MinVae,
    rng: &mut Rng,
) -> Result<MinVae> {
    ensure!(variant.is_mixture(), "{variant} is not a mixture model");
    let mut m = MinVae::new(variant, dims, rng)?;
    m.audio_encoder = Some(
        audio
            .audio_encoder
            .clone()
            .ok_or_else(|| invalid!("{} has no audio encoder to copy", audio.variant))?,
    );
    m.visual_encoder = Some(
        visual
            .visual_encoder
            .clone()
            .ok_or_else(|| invalid!("{} has no visual encoder to copy", visual.variant))?,
    );
    m.decoder = decoder_source.decoder.clone();
    m.validate()?;
    Ok(m)
}

/// Mean negative ELBO of a standard model over `set` with a fixed seed,
/// useful for comparing checkpoints.
pub fn evaluate_standard_loss(
    model: &MinVae,
    set: &TrainingSet,
    posterior: Posterior,
    seed: u64,
) -> Result<f64> {
    set.check_model(model)?;
    let batch = FrameBatch::new(
        set.power(),
        if model.variant.needs_visual() {
            set.visual.clone()
        } else {
            None
        },
    )?;
    let mut rng = Rng::new(seed);
    let noise = draw_noise(&mut rng, batch.len(), model.dims.latent);
    let costs = branch_costs(model, &batch, posterior, noise.view())?;
    Ok(costs.iter().sum::<f64>() / costs.len() as f64)
}
