use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, Zip};
use rayon::prelude::*;

use super::metrics::{mix_at_snr, si_sdr};
use super::toy::{white_noise, white_noise_frame_energy, ToyUtterance};
use crate::dsp::{istft, stft, ComplexSpectrogram, Waveform};
use crate::enhance::{enhance_utterance, EnhanceConfig, NMF_FLOOR};
use crate::error::{ensure, invalid, Result};
use crate::model::MinVae;
use crate::nn::{stream_id, Rng};

const STREAM_MIXTURE: u64 = 0x58;

/// A noisy utterance with its clean reference.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub id: String,
    pub snr_db: f64,
    pub clean: Waveform,
    pub noisy: Waveform,
    /// `N × M` visual features, if any.
    pub visual: Option<Array2<f64>>,
    /// True variance of the clean STFT coefficients, `N × F`, when known.
    pub speech_variance: Option<Array2<f64>>,
    /// Per-sample variance of the additive white noise, when known.
    pub noise_sample_variance: Option<f64>,
}

/// Adds white Gaussian noise to each utterance at each SNR level.
pub fn make_mixtures(utts: &[ToyUtterance], snr_levels: &[f64], seed: u64) -> Result<Vec<Mixture>> {
    ensure!(!snr_levels.is_empty(), "no SNR levels requested");
    let mut out = Vec::with_capacity(utts.len() * snr_levels.len());
    for (li, &snr) in snr_levels.iter().enumerate() {
        for (ui, u) in utts.iter().enumerate() {
            let mut rng = Rng::stream(
                seed,
                stream_id(STREAM_MIXTURE, (li * utts.len() + ui) as u64),
            );
            let noise = white_noise(u.clean.len(), &mut rng)?;
            let noisy = mix_at_snr(&u.clean, &noise, snr)?;
            let scaled: f64 = noisy
                .samples
                .iter()
                .zip(&u.clean.samples)
                .map(|(y, c)| (y - c) * (y - c))
                .sum::<f64>();
            let gain2 = scaled / noise.samples.iter().map(|v| v * v).sum::<f64>();
            out.push(Mixture {
                id: u.id.clone(),
                snr_db: snr,
                clean: u.clean.clone(),
                noisy,
                visual: Some(u.visual.clone()),
                speech_variance: Some(u.oracle_variance.clone()),
                noise_sample_variance: Some(gain2),
            });
        }
    }
    Ok(out)
}

/// Anything that maps a noisy mixture to a speech estimate.
pub trait Enhancer: Sync {
    fn name(&self) -> &str;
    fn enhance(&self, mixture: &Mixture) -> Result<Waveform>;
}

/// Returns the noisy input unchanged.
pub struct Bypass;

impl Enhancer for Bypass {
    fn name(&self) -> &str {
        "bypass"
    }

    fn enhance(&self, mixture: &Mixture) -> Result<Waveform> {
        Ok(mixture.noisy.clone())
    }
}

/// Wiener filter built from the true speech and noise variances.
pub struct OracleWiener {
    pub window_len: usize,
    pub hop: usize,
}

impl Enhancer for OracleWiener {
    fn name(&self) -> &str {
        "oracle-wiener"
    }

    fn enhance(&self, mixture: &Mixture) -> Result<Waveform> {
        let speech = mixture
            .speech_variance
            .as_ref()
            .ok_or_else(|| invalid!("{}: oracle Wiener needs the speech variance", mixture.id))?;
        let noise = mixture
            .noise_sample_variance
            .ok_or_else(|| invalid!("{}: oracle Wiener needs the noise variance", mixture.id))?;
        let x = stft(&mixture.noisy, self.window_len, self.hop)?;
        ensure!(
            speech.dim() == x.frames.dim(),
            "{}: speech variance is {:?}, spectrogram {:?}",
            mixture.id,
            speech.dim(),
            x.frames.dim()
        );
        let energy = white_noise_frame_energy(mixture.noisy.len(), self.window_len, self.hop);
        let mut frames = x.frames.clone();
        for (t, mut row) in frames.rows_mut().into_iter().enumerate() {
            let nv = noise * energy[t];
            Zip::from(&mut row)
                .and(speech.row(t))
                .for_each(|c, &s| *c *= s / (s + nv).max(NMF_FLOOR));
        }
        istft(&ComplexSpectrogram { frames, ..x })
    }
}

/// The variational-EM enhancer of a trained model.
pub struct VemEnhancer<'a> {
    pub model: &'a MinVae,
    pub config: EnhanceConfig,
}

impl Enhancer for VemEnhancer<'_> {
    fn name(&self) -> &str {
        "vem"
    }

    fn enhance(&self, mixture: &Mixture) -> Result<Waveform> {
        let visual = if self.model.variant.needs_visual() {
            Some(
                mixture
                    .visual
                    .as_ref()
                    .ok_or_else(|| invalid!("{}: model needs visual features", mixture.id))?
                    .view(),
            )
        } else {
            None
        };
        Ok(enhance_utterance(self.model, &mixture.noisy, visual, &self.config)?.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub utterance_id: String,
    pub snr_db: f64,
    pub in_sisdr: f64,
    pub out_sisdr: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnrAggregate {
    pub snr_db: f64,
    pub count: usize,
    pub mean_in: f64,
    pub mean_out: f64,
    pub mean_delta: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreReport {
    pub rows: Vec<ScoreRow>,
}

impl ScoreReport {
    pub const HEADER: &'static str = "utterance_id\tsnr_db\tin_sisdr\tout_sisdr\tdelta";
    pub const AGGREGATE_HEADER: &'static str =
        "snr_db\tcount\tmean_in_sisdr\tmean_out_sisdr\tmean_delta";

    /// One aggregate per distinct SNR level, ascending.
    pub fn aggregates(&self) -> Vec<SnrAggregate> {
        let mut groups: BTreeMap<i64, Vec<&ScoreRow>> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry((r.snr_db * 1e6).round() as i64)
                .or_default()
                .push(r);
        }
        groups
            .into_values()
            .map(|g| {
                let n = g.len() as f64;
                SnrAggregate {
                    snr_db: g[0].snr_db,
                    count: g.len(),
                    mean_in: g.iter().map(|r| r.in_sisdr).sum::<f64>() / n,
                    mean_out: g.iter().map(|r| r.out_sisdr).sum::<f64>() / n,
                    mean_delta: g.iter().map(|r| r.delta).sum::<f64>() / n,
                }
            })
            .collect()
    }

    pub fn mean_delta(&self) -> f64 {
        self.rows.iter().map(|r| r.delta).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_out(&self) -> f64 {
        self.rows.iter().map(|r| r.out_sisdr).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.utterance_id, r.snr_db, r.in_sisdr, r.out_sisdr, r.delta
            );
        }
        out
    }

    pub fn aggregate_tsv(&self) -> String {
        let mut out = String::from(Self::AGGREGATE_HEADER);
        out.push('\n');
        for a in self.aggregates() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                a.snr_db, a.count, a.mean_in, a.mean_out, a.mean_delta
            );
        }
        out
    }
}

/// Scores `enhancer` on every mixture.
pub fn evaluate(enhancer: &dyn Enhancer, mixtures: &[Mixture]) -> Result<ScoreReport> {
    ensure!(!mixtures.is_empty(), "no mixtures to evaluate");
    let rows = mixtures
        .par_iter()
        .map(|m| {
            let est = enhancer.enhance(m)?;
            ensure!(
                est.len() == m.clean.len(),
                "{}: {} produced {} samples for a {}-sample input",
                m.id,
                enhancer.name(),
                est.len(),
                m.clean.len()
            );
            let in_sisdr = si_sdr(&m.clean, &m.noisy)?;
            let out_sisdr = si_sdr(&m.clean, &est)?;
            Ok(ScoreRow {
                utterance_id: m.id.clone(),
                snr_db: m.snr_db,
                in_sisdr,
                out_sisdr,
                delta: out_sisdr - in_sisdr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreReport { rows })
}
