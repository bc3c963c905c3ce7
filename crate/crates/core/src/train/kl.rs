use crate::error::{ensure, Result};

/// KL( N(mean1, diag(cov_diag1)) ‖ N(mean2, cov2·I) ).
pub fn kl_gaussians(mean1: &[f64], cov_diag1: &[f64], mean2: &[f64], cov2: f64) -> Result<f64> {
    ensure!(
        mean1.len() == cov_diag1.len() && mean1.len() == mean2.len(),
        "dimension mismatch: {} / {} / {}",
        mean1.len(),
        cov_diag1.len(),
        mean2.len()
    );
    ensure!(
        cov2 > 0.0 && cov_diag1.iter().all(|&v| v > 0.0),
        "variances must be positive"
    );
    let l = mean1.len() as f64;
    let log_det1: f64 = cov_diag1.iter().map(|v| v.ln()).sum();
    let trace: f64 = cov_diag1.iter().sum();
    let sq: f64 = mean1
        .iter()
        .zip(mean2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(0.5 * (l * cov2.ln() - log_det1 - l + trace / cov2 + sq / cov2))
}

/// KL between two diagonal Gaussians.
pub fn kl_diagonal(mean1: &[f64], var1: &[f64], mean2: &[f64], var2: &[f64]) -> Result<f64> {
    ensure!(
        mean1.len() == var1.len() && mean1.len() == mean2.len() && mean1.len() == var2.len(),
        "dimension mismatch"
    );
    ensure!(
        var1.iter().chain(var2).all(|&v| v > 0.0),
        "variances must be positive"
    );
    Ok(0.5
        * mean1
            .iter()
            .zip(var1)
            .zip(mean2.iter().zip(var2))
            .map(|((m1, v1), (m2, v2))| {
                v2.ln() - v1.ln() - 1.0 + v1 / v2 + (m1 - m2) * (m1 - m2) / v2
            })
            .sum::<f64>())
}

/// KL( Bernoulli(pi_n) ‖ Bernoulli(pi) ), with `0 log 0 = 0`.
pub fn kl_bernoulli(pi_n: f64, pi: f64) -> f64 {
    let term = |p: f64, q: f64| if p > 0.0 { p * (p / q).ln() } else { 0.0 };
    term(pi_n, pi) + term(1.0 - pi_n, 1.0 - pi)
}
