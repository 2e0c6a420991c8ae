//! Fixed-K null law of the statistic, for validating the bootstrap.
//!
//! With independent errors of variance `σ²_i`, the statistic under the null
//! is distributed like `Σ_k ω_k (g_k² − 1)` for standard normal `g_k`, where
//! `ω` are the eigenvalues of `D^{1/2} (P − diag P) D^{1/2} / √K` and
//! `D = diag(σ²)`. The weights sum to zero because `P − diag P` is traceless.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::projection::RidgeProjection;
use crate::rng::{substream, StreamRole};

/// Eigenvalues of `D^{1/2} P̃ D^{1/2} / √K`, in descending order.
pub fn null_spectrum_oracle(p: &RidgeProjection, sigma2: &[f64]) -> Result<Vec<f64>> {
    let n = p.n();
    if sigma2.len() != n {
        return Err(Error::DimensionMismatch(format!("{} variances for {} observations", sigma2.len(), n)));
    }
    if sigma2.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidConfig("error variances must be positive and finite".into()));
    }
    let k = p.k_theta();
    if k <= 0.0 {
        return Err(Error::ZeroKLambda);
    }
    let sd: Vec<f64> = sigma2.iter().map(|s| s.sqrt()).collect();
    let mut a = p.matrix();
    let scale = 1.0 / k.sqrt();
    for j in 0..n {
        for i in 0..n {
            a[(i, j)] = if i == j { 0.0 } else { a[(i, j)] * sd[i] * sd[j] * scale };
        }
    }
    let mut w: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
    w.sort_by(|x, y| y.total_cmp(x));
    Ok(w)
}

const MC_BLOCK: usize = 4096;

/// Monte Carlo draws of the centered weighted chi-square `Σ_k ω_k (g_k² − 1)`.
pub fn weighted_chi_square_draws(weights: &[f64], draws: usize, seed: u64) -> Vec<f64> {
    let blocks = draws.div_ceil(MC_BLOCK);
    let per_block: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, StreamRole::Auxiliary, b as u64);
            let width = MC_BLOCK.min(draws - b * MC_BLOCK);
            (0..width)
                .map(|_| {
                    weights
                        .iter()
                        .map(|w| {
                            let g: f64 = rng.sample(StandardNormal);
                            w * (g * g - 1.0)
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    per_block.into_iter().flatten().collect()
}

/// Monte Carlo `p`-quantile of the centered weighted chi-square.
pub fn weighted_chi_square_quantile(weights: &[f64], p: f64, draws: usize, seed: u64) -> f64 {
    let mut d = weighted_chi_square_draws(weights, draws, seed);
    d.sort_unstable_by(f64::total_cmp);
    let idx = ((p * draws as f64).ceil() as usize).clamp(1, draws) - 1;
    d[idx]
}
