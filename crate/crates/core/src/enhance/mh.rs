use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::target::{mix_priors, speech_term, LatentTarget};
use crate::error::{ensure, Result};
use crate::nn::{stream_id, Rng};

/// Random-walk Metropolis-Hastings settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainConfig {
    pub total: usize,
    pub burnin: usize,
    /// Proposal variance.
    pub epsilon: f64,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.burnin < self.total,
            "burn-in ({}) must be shorter than the chain ({})",
            self.burnin,
            self.total
        );
        ensure!(
            self.epsilon > 0.0 && self.epsilon.is_finite(),
            "proposal variance must be positive"
        );
        Ok(())
    }

    pub fn retained(&self) -> usize {
        self.total - self.burnin
    }
}

/// Retained samples of one frame's chain.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentChain {
    /// `D` samples, each of length `L`.
    pub samples: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub epsilon: f64,
}

impl LatentChain {
    pub fn last(&self) -> &[f64] {
        self.samples.last().expect("at least one retained sample")
    }
}

/// A chain plus the quantities later steps reuse for each retained sample.
#[derive(Clone, Debug)]
pub(crate) struct ChainDraw {
    pub chain: LatentChain,
    /// Decoder variances, `D × F`.
    pub variances: Array2<f64>,
    /// `(log p(z|1), log p(z|0))` per retained sample.
    pub log_priors: Vec<(f64, f64)>,
}

const CHUNK: usize = 32;

/// Runs one chain per frame. Frame `n` draws from the stream
/// `(seed, stream_id(stream, n))`, so results do not depend on scheduling.
pub(crate) fn sample_chains(
    target: &LatentTarget,
    moments: ArrayView2<f64>,
    pi_n: &[f64],
    z_init: ArrayView2<f64>,
    cfg: &ChainConfig,
    seed: u64,
    stream: u64,
) -> Result<Vec<ChainDraw>> {
    cfg.validate()?;
    let n = moments.nrows();
    ensure!(
        pi_n.len() == n && z_init.nrows() == n,
        "frame counts differ: {} moments, {} responsibilities, {} initial codes",
        n,
        pi_n.len(),
        z_init.nrows()
    );
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let parts: Vec<Result<Vec<ChainDraw>>> = starts
        .par_iter()
        .map(|&a| {
            let frames: Vec<usize> = (a..(a + CHUNK).min(n)).collect();
            sample_chunk(target, moments, pi_n, z_init, cfg, seed, stream, &frames)
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn sample_chunk(
    target: &LatentTarget,
    moments: ArrayView2<f64>,
    pi_n: &[f64],
    z_init: ArrayView2<f64>,
    cfg: &ChainConfig,
    seed: u64,
    stream: u64,
    frames: &[usize],
) -> Result<Vec<ChainDraw>> {
    let l = z_init.ncols();
    let f = moments.ncols();
    let c = frames.len();
    let step = cfg.epsilon.sqrt();
    let mut rngs: Vec<Rng> = frames
        .iter()
        .map(|&i| Rng::stream(seed, stream_id(stream, i as u64)))
        .collect();

    let log_target = |sigma: ArrayView2<f64>, z: &Array2<f64>| -> Vec<(f64, (f64, f64))> {
        (0..c)
            .map(|r| {
                let i = frames[r];
                let zr = z.row(r);
                let zs = zr.as_slice().expect("row");
                let (la, lv) = target.log_priors(i, zs);
                let s = speech_term(
                    sigma.row(r).as_slice().expect("row"),
                    moments.row(i).as_slice().expect("contiguous moments"),
                );
                (s + mix_priors(pi_n[i], la, lv), (la, lv))
            })
            .collect()
    };

    let mut z = Array2::zeros((c, l));
    for (r, &i) in frames.iter().enumerate() {
        z.row_mut(r).assign(&z_init.row(i));
    }
    let mut sigma = target.decode(z.view(), frames)?;
    let mut current = log_target(sigma.view(), &z);
    let mut accepted = vec![0usize; c];
    let d = cfg.retained();
    let mut kept: Vec<ChainDraw> = (0..c)
        .map(|_| ChainDraw {
            chain: LatentChain {
                samples: Vec::with_capacity(d),
                acceptance_rate: 0.0,
                epsilon: cfg.epsilon,
            },
            variances: Array2::zeros((d, f)),
            log_priors: Vec::with_capacity(d),
        })
        .collect();

    for t in 0..cfg.total {
        let mut cand = z.clone();
        for (r, rng) in rngs.iter_mut().enumerate() {
            for k in 0..l {
                cand[[r, k]] += step * rng.normal();
            }
        }
        let cand_sigma = target.decode(cand.view(), frames)?;
        let proposed = log_target(cand_sigma.view(), &cand);
        for r in 0..c {
            let u = rngs[r].uniform();
            let diff = proposed[r].0 - current[r].0;
            if diff.is_nan() {
                continue;
            }
            if u.ln() < diff {
                z.row_mut(r).assign(&cand.row(r));
                sigma.row_mut(r).assign(&cand_sigma.row(r));
                current[r] = proposed[r];
                accepted[r] += 1;
            }
        }
        if t >= cfg.burnin {
            let j = t - cfg.burnin;
            for (r, k) in kept.iter_mut().enumerate() {
                k.chain.samples.push(z.row(r).to_vec());
                k.variances.row_mut(j).assign(&sigma.row(r));
                k.log_priors.push(current[r].1);
            }
        }
    }
    for (k, a) in kept.iter_mut().zip(accepted) {
        k.chain.acceptance_rate = a as f64 / cfg.total as f64;
    }
    Ok(kept)
}
