//! Data-driven ridge penalties.
//!
//! [`select_lambda`] picks the largest `θ ∈ [0, θ̄]` at which both leverage
//! ratios are at most `1/√n`. [`gamma_star`] is the competing choice used by
//! the ridge jackknife test: the largest maximizer of `K_θ` over the
//! admissible set. Both scan the same grid: `{0, θ̄}` plus geometrically
//! spaced interior points starting at `s_min² · 1e-4`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::projection::{operator_norm_bound, ratios, SvdFactors};

pub const DEFAULT_GRID_SIZE: usize = 200;

/// Relative width at which the feasibility boundary bisection stops.
const BISECTION_RTOL: f64 = 1e-6;

/// Grid values within this relative distance of the maximum count as ties.
const ARGMAX_RTOL: f64 = 1e-9;

/// Leverage criteria and `K_θ` at one penalty value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridEvaluation {
    pub theta: f64,
    /// `max_i P²_ii / K_θ`.
    pub q_criterion: f64,
    /// `max_i Σ_{j≠i} P²_ij / K_θ`.
    pub p_criterion: f64,
    pub k_theta: f64,
}

impl GridEvaluation {
    pub fn feasible(&self, bound: f64) -> bool {
        self.q_criterion <= bound && self.p_criterion <= bound
    }
}

/// Outcome of the leverage-constrained search.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaSelection {
    /// Chosen penalty; `None` when no grid point is feasible.
    pub lambda: Option<f64>,
    pub theta_bar: f64,
    pub feasible: bool,
    pub grid_evaluations: Vec<GridEvaluation>,
}

impl LambdaSelection {
    /// The selected penalty, or the lower end of the search interval when
    /// nothing was feasible.
    pub fn lambda_or_zero(&self) -> f64 {
        self.lambda.unwrap_or(0.0)
    }
}

/// Evaluates both leverage criteria at `theta` in `O(n·r)`.
pub fn evaluate_criteria(f: &SvdFactors, theta: f64) -> GridEvaluation {
    let weights = f.shrinkage(theta);
    let (diag, row_mass) = f.diag_and_row_mass(&weights);
    let fro: f64 = weights.iter().map(|w| w * w).sum();
    let diag_sq: f64 = diag.iter().map(|d| d * d).sum();
    let mut k_theta = fro - diag_sq;
    if k_theta <= 4.0 * f.n() as f64 * f64::EPSILON * fro {
        k_theta = 0.0;
    }
    let max_diag_sq = diag.iter().map(|d| d * d).fold(0.0, f64::max);
    let max_off = row_mass
        .iter()
        .zip(diag.iter())
        .map(|(r, d)| (r - d * d).max(0.0))
        .fold(0.0, f64::max);
    let lev = ratios(max_off, max_diag_sq, k_theta);
    GridEvaluation { theta, q_criterion: lev.q_n, p_criterion: lev.p_n, k_theta }
}

/// `{0, θ̄}` plus `grid_size − 2` geometric points from `s_min²·1e-4` up to `θ̄`.
pub fn theta_grid(f: &SvdFactors, grid_size: usize) -> Vec<f64> {
    let theta_bar = operator_norm_bound(f);
    let start = f.s_min() * f.s_min() * 1e-4;
    let interior = grid_size.saturating_sub(2);
    let mut grid = Vec::with_capacity(grid_size);
    grid.push(0.0);
    let ratio = theta_bar / start;
    for k in 0..interior {
        grid.push(start * ratio.powf(k as f64 / interior as f64));
    }
    grid.push(theta_bar);
    grid.dedup();
    grid
}

/// Scans the grid and refines the top feasible boundary, without failing
/// when nothing is feasible.
pub fn scan_lambda(f: &SvdFactors, grid_size: usize) -> Result<LambdaSelection> {
    if grid_size < 2 {
        return Err(Error::InvalidConfig(format!("grid_size must be at least 2, got {grid_size}")));
    }
    let bound = 1.0 / (f.n() as f64).sqrt();
    let grid = theta_grid(f, grid_size);
    let evals: Vec<GridEvaluation> = grid.par_iter().map(|&t| evaluate_criteria(f, t)).collect();
    let theta_bar = operator_norm_bound(f);

    let Some(top) = evals.iter().rposition(|e| e.feasible(bound)) else {
        return Ok(LambdaSelection { lambda: None, theta_bar, feasible: false, grid_evaluations: evals });
    };
    let lambda = if top + 1 == evals.len() {
        evals[top].theta
    } else {
        let (mut lo, mut hi) = (evals[top].theta, evals[top + 1].theta);
        while hi - lo > BISECTION_RTOL * hi {
            let mid = 0.5 * (lo + hi);
            if evaluate_criteria(f, mid).feasible(bound) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    Ok(LambdaSelection { lambda: Some(lambda), theta_bar, feasible: true, grid_evaluations: evals })
}

/// The leverage-constrained penalty; fails with
/// [`Error::DegenerateInstruments`] when no `θ` qualifies.
pub fn select_lambda(f: &SvdFactors, grid_size: usize) -> Result<LambdaSelection> {
    let sel = scan_lambda(f, grid_size)?;
    if sel.feasible {
        Ok(sel)
    } else {
        Err(Error::DegenerateInstruments { theta_bar: sel.theta_bar })
    }
}

/// Outcome of the `K_θ`-maximizing penalty search.
#[derive(Debug, Clone, Serialize)]
pub struct GammaStarSelection {
    pub gamma_star: f64,
    /// Numerical rank of `Z`.
    pub r_n: usize,
    /// `(γ, K_γ)` at every grid point, ascending in `γ`.
    pub objective_trace: Vec<(f64, f64)>,
}

fn objective(f: &SvdFactors, theta: f64) -> f64 {
    evaluate_criteria(f, theta).k_theta
}

/// Largest maximizer of `K_γ` over `γ ≥ 0` (full column rank) or `γ ≥ 1`
/// (rank deficient), searched on `[lower, θ̄]`.
pub fn gamma_star(f: &SvdFactors) -> GammaStarSelection {
    gamma_star_with_grid(f, DEFAULT_GRID_SIZE)
}

pub fn gamma_star_with_grid(f: &SvdFactors, grid_size: usize) -> GammaStarSelection {
    let r_n = f.rank();
    let lower = if r_n == f.k() { 0.0 } else { 1.0 };
    let mut grid: Vec<f64> = theta_grid(f, grid_size.max(2)).into_iter().filter(|&t| t >= lower).collect();
    if grid.first() != Some(&lower) {
        grid.insert(0, lower);
    }
    let trace: Vec<(f64, f64)> = grid.par_iter().map(|&t| (t, objective(f, t))).collect();
    let best = trace.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    let cutoff = if best > 0.0 { best * (1.0 - ARGMAX_RTOL) } else { best };
    let idx = trace.iter().rposition(|&(_, v)| v >= cutoff).expect("grid is nonempty");

    let mut gamma = trace[idx].0;
    if best > 0.0 && idx > 0 && idx + 1 < trace.len() {
        let (t, v) = golden_max(f, trace[idx - 1].0, trace[idx + 1].0);
        if v >= trace[idx].1 {
            gamma = t;
        }
    }
    GammaStarSelection { gamma_star: gamma, r_n, objective_trace: trace }
}

fn golden_max(f: &SvdFactors, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(f, c), objective(f, d));
    while (b - a) > 1e-8 * b.abs().max(1e-12) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(f, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(f, d);
        }
    }
    let t = 0.5 * (a + b);
    (t, objective(f, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::{leverage_diagnostics, ridge_projection_at, svd_factorize};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    #[test]
    fn diagonal_family_is_degenerate() {
        let f = svd_factorize(&DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        assert!(matches!(select_lambda(&f, 50), Err(Error::DegenerateInstruments { .. })));
        let scan = scan_lambda(&f, 50).unwrap();
        assert!(!scan.feasible && scan.lambda.is_none());
    }

    #[test]
    fn all_ones_column_selects_theta_bar() {
        let n = 100;
        let f = svd_factorize(&DMatrix::from_element(n, 1, 1.0)).unwrap();
        let sel = select_lambda(&f, DEFAULT_GRID_SIZE).unwrap();
        assert!((sel.theta_bar - n as f64).abs() < 1e-9);
        assert!((sel.lambda.unwrap() - n as f64).abs() < 1e-9);
        // Closed forms: q = 1/(n(n-1)), p = 1/n for every θ.
        for e in &sel.grid_evaluations {
            assert!((e.q_criterion - 1.0 / (n * (n - 1)) as f64).abs() < 1e-12);
            assert!((e.p_criterion - 1.0 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn selected_lambda_satisfies_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 60;
        let z = DMatrix::from_fn(n, 80, |_, _| rng.sample::<f64, _>(StandardNormal));
        let f = Arc::new(svd_factorize(&z).unwrap());
        let sel = select_lambda(&f, DEFAULT_GRID_SIZE).unwrap();
        let lambda = sel.lambda.unwrap();
        assert!((0.0..=sel.theta_bar).contains(&lambda));
        let p = ridge_projection_at(&f, lambda).unwrap();
        let d = leverage_diagnostics(&p);
        let bound = 1.0 / (n as f64).sqrt();
        assert!(d.p_n <= bound + 1e-12 && d.q_n <= bound + 1e-12);
    }

    #[test]
    fn grid_layout() {
        let f = svd_factorize(&DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 2.0, 1.0])).unwrap();
        let g = theta_grid(&f, 10);
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), operator_norm_bound(&f));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(scan_lambda(&f, 1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn gamma_star_all_ones_two_rows_is_zero() {
        // K_γ = 2/(2+γ)², strictly decreasing.
        let f = svd_factorize(&DMatrix::from_element(2, 1, 1.0)).unwrap();
        let g = gamma_star(&f);
        assert_eq!(g.gamma_star, 0.0);
        assert_eq!(g.r_n, 1);
        for &(t, v) in &g.objective_trace {
            assert!((v - 2.0 / ((2.0 + t) * (2.0 + t))).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_star_flat_objective_returns_grid_maximum() {
        let f = svd_factorize(&DMatrix::identity(2, 2)).unwrap();
        let g = gamma_star(&f);
        assert!(g.objective_trace.iter().all(|&(_, v)| v == 0.0));
        assert_eq!(g.gamma_star, g.objective_trace.last().unwrap().0);
    }

    #[test]
    fn gamma_star_rank_deficient_lower_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut z = DMatrix::from_fn(30, 50, |_, _| rng.sample::<f64, _>(StandardNormal));
        for mut col in z.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        let f = svd_factorize(&z).unwrap();
        assert_eq!(f.rank(), 29);
        let g = gamma_star(&f);
        assert!(g.gamma_star >= 1.0);
        // Interior maximum: the objective at γ* beats its grid neighbours.
        let v = objective(&f, g.gamma_star);
        assert!(g.objective_trace.iter().all(|&(_, o)| o <= v * (1.0 + 1e-9)));
    }
}
