use super::Rng;
use crate::error::{ensure, Result};

/// Draws `mean + sqrt(variance) * noise` with `noise ~ N(0, I)`.
///
/// The noise is returned alongside the sample so callers can push gradients
/// through the draw.
pub fn sample_gaussian_reparam(
    mean: &[f64],
    variance: &[f64],
    rng: &mut Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure!(
        mean.len() == variance.len(),
        "mean has {} entries, variance {}",
        mean.len(),
        variance.len()
    );
    ensure!(
        variance.iter().all(|&v| v > 0.0 && v.is_finite()),
        "variance entries must be positive and finite"
    );
    let noise = rng.normals(mean.len());
    let sample = mean
        .iter()
        .zip(variance)
        .zip(&noise)
        .map(|((m, v), e)| m + v.sqrt() * e)
        .collect();
    Ok((sample, noise))
}
