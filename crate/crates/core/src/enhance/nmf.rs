use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{ensure, Result};
use crate::nn::Rng;

/// Floor applied to NMF factors and to every divisor of the enhancer.
pub const NMF_FLOOR: f64 = 1e-12;

/// Noise variance model `W·H` with `W: F × K` and `H: K × N`.
#[derive(Clone, Debug, PartialEq)]
pub struct NmfModel {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
}

impl NmfModel {
    pub fn new(w: Array2<f64>, h: Array2<f64>) -> Result<Self> {
        let m = Self { w, h };
        m.validate()?;
        Ok(m)
    }

    /// Uniform positive entries rescaled so the mean of `W·H` is `level`.
    pub fn random(
        bins: usize,
        rank: usize,
        frames: usize,
        level: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        ensure!(
            bins >= 1 && rank >= 1 && frames >= 1,
            "NMF dimensions must be positive"
        );
        ensure!(
            level > 0.0 && level.is_finite(),
            "NMF level must be positive"
        );
        let mut w = Array2::from_shape_simple_fn((bins, rank), || rng.uniform_range(0.1, 1.0));
        let mut h = Array2::from_shape_simple_fn((rank, frames), || rng.uniform_range(0.1, 1.0));
        let mean = w.dot(&h).mean().expect("non-empty");
        let c = (level / mean).sqrt();
        w.mapv_inplace(|v| (v * c).max(NMF_FLOOR));
        h.mapv_inplace(|v| (v * c).max(NMF_FLOOR));
        Self::new(w, h)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.w.ncols() == self.h.nrows(),
            "W is {:?} but H is {:?}",
            self.w.dim(),
            self.h.dim()
        );
        ensure!(
            self.w
                .iter()
                .chain(self.h.iter())
                .all(|&v| v >= NMF_FLOOR && v.is_finite()),
            "NMF factors must be finite and at least {NMF_FLOOR}"
        );
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.w.nrows()
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn frames(&self) -> usize {
        self.h.ncols()
    }

    /// `W·H`, `F × N`.
    pub fn variance(&self) -> Array2<f64> {
        self.w.dot(&self.h).mapv(|v| v.max(NMF_FLOOR))
    }
}

/// Itakura-Saito divergence `Σ v/u − log(v/u) − 1`.
pub fn is_divergence(v: ArrayView2<f64>, u: ArrayView2<f64>) -> f64 {
    let mut acc = 0.0;
    Zip::from(v).and(u).for_each(|&a, &b| {
        let r = a / b;
        acc += r - r.ln() - 1.0;
    });
    acc
}

/// One Itakura-Saito multiplicative update of `H`, then of `W`, towards the
/// `F × N` target `v`.
pub fn m_step_nmf(v: ArrayView2<f64>, nmf: &mut NmfModel) -> Result<()> {
    ensure!(
        v.dim() == (nmf.bins(), nmf.frames()),
        "target is {:?}, NMF model is {} × {}",
        v.dim(),
        nmf.bins(),
        nmf.frames()
    );
    let ratios = |nmf: &NmfModel| {
        let wh = nmf.variance();
        let inv = wh.mapv(|x| 1.0 / x);
        let mut weighted = inv.clone();
        Zip::from(&mut weighted)
            .and(v)
            .and(&inv)
            .for_each(|o, &a, &i| *o = a * i * i);
        (weighted, inv)
    };
    let (num, den) = ratios(nmf);
    let up = nmf.w.t().dot(&num);
    let down = nmf.w.t().dot(&den);
    Zip::from(&mut nmf.h)
        .and(&up)
        .and(&down)
        .for_each(|h, &a, &b| *h = (*h * a / b.max(NMF_FLOOR)).max(NMF_FLOOR));
    let (num, den) = ratios(nmf);
    let up = num.dot(&nmf.h.t());
    let down = den.dot(&nmf.h.t());
    Zip::from(&mut nmf.w)
        .and(&up)
        .and(&down)
        .for_each(|w, &a, &b| *w = (*w * a / b.max(NMF_FLOOR)).max(NMF_FLOOR));
    Ok(())
}
