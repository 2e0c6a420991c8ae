//! Benchmark tests: two jackknife AR variants, the classical robust AR test,
//! the ridge jackknife AR test, the sup-score test, and the regularized
//! ratio test with a residual bootstrap.
//!
//! Every function takes a [`Design`], whose instruments are already
//! standardized. The jackknife and AR statistics are invariant to column
//! scaling; the ridge-based ones (`rjar`, `ct_test`) are not.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::ar::upper_order_statistic;
use crate::design::Design;
use crate::error::{Error, Result};
use crate::projection::RidgeProjection;
use crate::quantile::{chi_square_quantile, normal_quantile};
use crate::regularizer::{gamma_star, GammaStarSelection};
use crate::result::{check_alpha, Method, TestMeta, TestResult};
use crate::rng::{substream, StreamRole};

/// Multiplier on the Bonferroni normal quantile in the sup-score test.
pub const BCCH_CONSTANT: f64 = 1.1;

/// Fixed ridge penalty of the ratio test.
pub const CT_RIDGE: f64 = 0.05;

/// `Σ_{i≠j} P²_ij e²_i e²_j`.
fn weighted_off_diagonal_mass(p: &DMatrix<f64>, e: &DVector<f64>) -> f64 {
    let e2 = e.map(|v| v * v);
    let n = e.len();
    let mut total = 0.0;
    for j in 0..n {
        let col = p.column(j);
        let mut acc = 0.0;
        for i in 0..n {
            if i != j {
                acc += col[i] * col[i] * e2[i];
            }
        }
        total += acc * e2[j];
    }
    total
}

/// Jackknife AR statistic `Σ_{i≠j} P_ij e_i e_j / (√Φ̂ √dof)` with
/// `Φ̂ = (2/dof) Σ_{i≠j} P²_ij e²_i e²_j`. Returns `(statistic, Φ̂)`; the
/// statistic is 0 when every cross term vanishes.
pub fn jackknife_statistic(p: &RidgeProjection, e: &DVector<f64>, dof: f64) -> (f64, f64) {
    let dense = p.matrix();
    let num = p.off_diagonal_form(e);
    let phi = 2.0 / dof * weighted_off_diagonal_mass(&dense, e);
    (studentize(num, phi, dof), phi)
}

fn studentize(num: f64, phi: f64, dof: f64) -> f64 {
    if phi > 0.0 {
        num / (phi.sqrt() * dof.sqrt())
    } else {
        0.0
    }
}

/// Cross-fit variance
/// `(2/K) Σ_{i≠j} P²_ij / (M_ii M_jj + M²_ij) · [e_i M_i e][e_j M_j e]`
/// with `M = I − P`, before any clamping.
pub fn cross_fit_variance(p: &DMatrix<f64>, e: &DVector<f64>, k: f64) -> Result<f64> {
    let n = e.len();
    let pe = p * e;
    let a: Vec<f64> = (0..n).map(|i| e[i] * (e[i] - pe[i])).collect();
    let m_diag: Vec<f64> = (0..n).map(|i| 1.0 - p[(i, i)]).collect();
    let mut total = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i == j {
                continue;
            }
            let pij = p[(i, j)];
            let den = m_diag[i] * m_diag[j] + pij * pij;
            if !(den > 0.0) {
                return Err(Error::DegenerateDenominator);
            }
            total += pij * pij / den * a[i] * a[j];
        }
    }
    Ok(2.0 / k * total)
}

/// Floor applied to the cross-fit variance: `1/√(n log n)`.
pub fn cross_fit_floor(n: usize) -> f64 {
    let n = n as f64;
    1.0 / (n * n.ln()).sqrt()
}

pub fn jar_std(design: &Design, beta0: f64, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let p = design.unregularized_projection()?;
    let e = design.residuals(beta0);
    let k = design.k() as f64;
    let (stat, phi) = jackknife_statistic(&p, &e, k);
    let meta = TestMeta { variance: Some(phi), k_lambda: Some(p.k_theta()), ..TestMeta::default() };
    Ok(TestResult::new(Method::JarStd, beta0, stat, normal_quantile(1.0 - alpha), alpha, meta))
}

pub fn jar_cf(design: &Design, beta0: f64, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let p = design.unregularized_projection()?;
    let e = design.residuals(beta0);
    let k = design.k() as f64;
    let dense = p.matrix();
    let raw = cross_fit_variance(&dense, &e, k)?;
    let floor = cross_fit_floor(design.n());
    let phi = raw.max(floor);
    let num = p.off_diagonal_form(&e);
    let stat = num / (phi.sqrt() * k.sqrt());
    let meta = TestMeta { variance: Some(raw), variance_clamped: Some(raw < floor), ..TestMeta::default() };
    Ok(TestResult::new(Method::JarCf, beta0, stat, normal_quantile(1.0 - alpha), alpha, meta))
}

/// `J' Ω̂^{-1} J` with `J = n^{-1/2} Z'e` and `Ω̂ = n^{-1} Z' diag(e²) Z`.
///
/// Computed as `‖U_A' 1‖²` where `U_A` spans the columns of
/// `A = diag(e) Z`, which is the same quantity without forming `Ω̂^{-1}`.
pub fn classical_ar_statistic(z: &DMatrix<f64>, e: &DVector<f64>) -> Result<f64> {
    let (n, k) = z.shape();
    let mut a = z.clone();
    for (i, mut row) in a.row_iter_mut().enumerate() {
        row *= e[i];
    }
    if a.iter().all(|&v| v == 0.0) {
        return Err(Error::SingularOmega);
    }
    let svd = a.svd(true, false);
    let s = &svd.singular_values;
    let tol = s.max() * n.max(k) as f64 * f64::EPSILON;
    let rank = s.iter().filter(|&&v| v > tol).count();
    if rank < k {
        return Err(Error::SingularOmega);
    }
    let u = svd.u.expect("requested U");
    let ones = DVector::from_element(n, 1.0);
    let mut stat = 0.0;
    for (c, sv) in u.column_iter().zip(s.iter()) {
        if *sv > tol {
            let proj = c.dot(&ones);
            stat += proj * proj;
        }
    }
    Ok(stat)
}

pub fn classical_ar(design: &Design, beta0: f64, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let e = design.residuals(beta0);
    let z = design.sample().z();
    let stat = classical_ar_statistic(z, &e)?;
    let cv = chi_square_quantile(1.0 - alpha, z.ncols() as f64);
    Ok(TestResult::new(Method::Ar, beta0, stat, cv, alpha, TestMeta::default()))
}

/// Ridge jackknife AR with a precomputed penalty selection.
pub fn rjar_with(design: &Design, selection: &GammaStarSelection, beta0: f64, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let r_n = selection.r_n;
    if r_n == 0 {
        return Err(Error::ZeroMatrix);
    }
    let p = design.projection(selection.gamma_star)?;
    let e = design.residuals(beta0);
    let (stat, phi) = jackknife_statistic(&p, &e, r_n as f64);
    let meta = TestMeta {
        gamma_star: Some(selection.gamma_star),
        r_n: Some(r_n),
        variance: Some(phi),
        k_lambda: Some(p.k_theta()),
        ..TestMeta::default()
    };
    Ok(TestResult::new(Method::Rjar, beta0, stat, normal_quantile(1.0 - alpha), alpha, meta))
}

pub fn rjar(design: &Design, beta0: f64, alpha: f64) -> Result<TestResult> {
    let selection = gamma_star(design.factors());
    rjar_with(design, &selection, beta0, alpha)
}

/// `max_j |Σ_i e_i Z_ij| / √(Σ_i e²_i Z²_ij)` over columns with a nonzero
/// denominator, and the number of such columns.
pub fn sup_score_statistic(z: &DMatrix<f64>, e: &DVector<f64>) -> Result<(f64, usize)> {
    let mut best: f64 = 0.0;
    let mut used = 0;
    for col in z.column_iter() {
        let num: f64 = col.iter().zip(e.iter()).map(|(z, e)| z * e).sum();
        let den: f64 = col.iter().zip(e.iter()).map(|(z, e)| z * z * e * e).sum();
        if den > 0.0 {
            used += 1;
            best = best.max(num.abs() / den.sqrt());
        }
    }
    if used == 0 {
        return Err(Error::DegenerateColumn);
    }
    Ok((best, used))
}

/// Sup-score test. Columns whose studentization denominator is zero are
/// dropped and the Bonferroni correction uses the remaining count.
pub fn sup_score_bcch(design: &Design, beta0: f64, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let e = design.residuals(beta0);
    let (stat, used) = sup_score_statistic(design.sample().z(), &e)?;
    let cv = BCCH_CONSTANT * normal_quantile(1.0 - alpha / (2.0 * used as f64));
    let meta = TestMeta { instruments_used: Some(used), ..TestMeta::default() };
    Ok(TestResult::new(Method::Bcch, beta0, stat, cv, alpha, meta))
}

/// `n e'P e / e'(I − P) e`, or `None` when the denominator vanishes.
pub fn ct_statistic(p: &RidgeProjection, e: &DVector<f64>) -> Option<f64> {
    let q = p.quadratic_form(e);
    let total = e.norm_squared();
    let den = total - q;
    if den > 1e-14 * total && total > 0.0 {
        Some(e.len() as f64 * q / den)
    } else {
        None
    }
}

const CT_BLOCK: usize = 128;

/// Ratio test at `θ = 0.05`. The critical value resamples the centered
/// restricted residuals i.i.d. with replacement and recomputes the ratio.
pub fn ct_test(design: &Design, beta0: f64, alpha: f64, boot_draws: usize, seed: u64) -> Result<TestResult> {
    check_alpha(alpha)?;
    if boot_draws == 0 {
        return Err(Error::InvalidConfig("bootstrap draws must be at least 1".into()));
    }
    let p = design.projection(CT_RIDGE)?;
    let e = design.residuals(beta0);
    let stat = ct_statistic(&p, &e).ok_or(Error::DegenerateDenominator)?;
    let n = e.len();
    let mean = e.mean();
    let centered: Vec<f64> = e.iter().map(|v| v - mean).collect();
    let blocks = boot_draws.div_ceil(CT_BLOCK);
    let per_block: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * CT_BLOCK;
            let width = CT_BLOCK.min(boot_draws - start);
            let mut v = DMatrix::<f64>::zeros(n, width);
            let mut totals = Vec::with_capacity(width);
            for (c, mut col) in v.column_iter_mut().enumerate() {
                let mut rng = substream(seed, StreamRole::ResidualResample, (start + c) as u64);
                let mut t = 0.0;
                for x in col.iter_mut() {
                    *x = centered[rng.random_range(0..n)];
                    t += *x * *x;
                }
                totals.push(t);
            }
            p.quadratic_forms(&v)
                .into_iter()
                .zip(totals)
                .map(|(q, t)| {
                    let den = t - q;
                    if den > 1e-14 * t && t > 0.0 {
                        n as f64 * q / den
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut draws: Vec<f64> = per_block.into_iter().flatten().collect();
    let cv = upper_order_statistic(&mut draws, alpha);
    let meta = TestMeta {
        ridge_theta: Some(CT_RIDGE),
        draws: Some(boot_draws),
        seed: Some(seed),
        bootstrap_scheme: Some("iid-resample-centered-residuals".into()),
        ..TestMeta::default()
    };
    Ok(TestResult::new(Method::Ct, beta0, stat, cv, alpha, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::PartialledSample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn design_from(y: &[f64], z: DMatrix<f64>, standardized: bool) -> Design {
        let n = y.len();
        let mut s = PartialledSample::new(DVector::from_row_slice(y), DVector::zeros(n), z).unwrap();
        if standardized {
            s = s.assume_standardized();
        }
        Design::new(&s).unwrap()
    }

    fn random_design(seed: u64, n: usize, k: usize) -> Design {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        design_from(&y, z, false)
    }

    #[test]
    fn jar_std_two_observations() {
        let d = design_from(&[1.0, 1.0], DMatrix::from_element(2, 1, 1.0), false);
        let r = jar_std(&d, 0.0, 0.05).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-12);
        assert!(!r.reject);
        let d = design_from(&[1.0, 0.0], DMatrix::from_element(2, 1, 1.0), false);
        assert_eq!(jar_std(&d, 0.0, 0.05).unwrap().statistic, 0.0);
    }

    #[test]
    fn jar_requires_invertible_gram() {
        let d = random_design(1, 5, 8);
        assert!(matches!(jar_std(&d, 0.0, 0.05), Err(Error::SingularGram { .. })));
        assert!(matches!(jar_cf(&d, 0.0, 0.05), Err(Error::SingularGram { .. })));
    }

    #[test]
    fn cross_fit_matches_double_loop() {
        let z = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, -0.5]);
        let d = design_from(&[0.3, -1.2, 2.0], z, false);
        let p = d.unregularized_projection().unwrap().matrix();
        let e = d.residuals(0.0);
        // Oracle with M_i e expanded term by term.
        let m = |i: usize, j: usize| if i == j { 1.0 - p[(i, j)] } else { -p[(i, j)] };
        let me: Vec<f64> = (0..3).map(|i| (0..3).map(|j| m(i, j) * e[j]).sum()).collect();
        let mut oracle = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    oracle += p[(i, j)].powi(2) / (m(i, i) * m(j, j) + m(i, j).powi(2)) * (e[i] * me[i]) * (e[j] * me[j]);
                }
            }
        }
        oracle *= 2.0;
        let got = cross_fit_variance(&p, &e, 1.0).unwrap();
        assert!((got - oracle).abs() < 1e-10 * oracle.abs().max(1.0));
    }

    #[test]
    fn cross_fit_clamp_uses_floor() {
        let d = random_design(3, 40, 3);
        let r = jar_cf(&d, 0.0, 0.05).unwrap();
        let p = d.unregularized_projection().unwrap();
        let e = d.residuals(0.0);
        let raw = r.meta.variance.unwrap();
        let phi = raw.max(cross_fit_floor(40));
        assert_eq!(r.meta.variance_clamped, Some(raw < cross_fit_floor(40)));
        let expect = p.off_diagonal_form(&e) / (phi.sqrt() * 3f64.sqrt());
        assert!((r.statistic - expect).abs() < 1e-12);
        // Forcing the clamp: tiny residuals shrink Φ̂ by c⁴ but the floor stays.
        let tiny = PartialledSample::new(d.sample().y() * 1e-6, d.sample().x().clone(), d.sample().z().clone())
            .unwrap()
            .assume_standardized();
        let dt = Design::new(&tiny).unwrap();
        let rt = jar_cf(&dt, 0.0, 0.05).unwrap();
        assert_eq!(rt.meta.variance_clamped, Some(true));
        let expect = dt.unregularized_projection().unwrap().off_diagonal_form(&dt.residuals(0.0))
            / (cross_fit_floor(40).sqrt() * 3f64.sqrt());
        assert!((rt.statistic - expect).abs() < 1e-15);
    }

    #[test]
    fn classical_ar_examples() {
        let d = design_from(&[2.0, 0.0], DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), true);
        let r = classical_ar(&d, 0.0, 0.05).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-12);
        assert!((r.critical_value - 3.841_459).abs() < 1e-5);
        assert!(!r.reject);
        let d = design_from(&[0.0, 3.0], DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), true);
        assert_eq!(classical_ar(&d, 0.0, 0.05).unwrap_err(), Error::SingularOmega);
    }

    #[test]
    fn classical_ar_matches_direct_formula() {
        let d = random_design(5, 30, 4);
        let z = d.sample().z();
        let e = d.residuals(0.0);
        let n: f64 = 30.0;
        let j = z.transpose() * &e / n.sqrt();
        let mut omega = DMatrix::zeros(4, 4);
        for i in 0..30 {
            let zi = z.row(i).transpose();
            omega += &zi * zi.transpose() * (e[i] * e[i] / n);
        }
        let direct = (j.transpose() * omega.try_inverse().unwrap() * &j)[(0, 0)];
        let got = classical_ar_statistic(z, &e).unwrap();
        assert!((got - direct).abs() < 1e-9 * direct);
    }

    #[test]
    fn rjar_equals_jar_std_at_zero_penalty() {
        let d = random_design(7, 40, 5);
        let g = GammaStarSelection { gamma_star: 0.0, r_n: 5, objective_trace: vec![] };
        let a = rjar_with(&d, &g, 0.0, 0.05).unwrap();
        let b = jar_std(&d, 0.0, 0.05).unwrap();
        assert!((a.statistic - b.statistic).abs() < 1e-12);
    }

    #[test]
    fn rjar_matches_double_loop() {
        let d = random_design(9, 3, 2);
        let sel = gamma_star(d.factors());
        let r = rjar_with(&d, &sel, 0.0, 0.05).unwrap();
        let z = d.sample().z();
        let g = z.transpose() * z + DMatrix::identity(2, 2) * sel.gamma_star;
        let p = z * g.try_inverse().unwrap() * z.transpose();
        let e = d.residuals(0.0);
        let (mut num, mut phi) = (0.0, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    num += p[(i, j)] * e[i] * e[j];
                    phi += p[(i, j)].powi(2) * e[i].powi(2) * e[j].powi(2);
                }
            }
        }
        let rn = sel.r_n as f64;
        phi *= 2.0 / rn;
        let oracle = num / (phi.sqrt() * rn.sqrt());
        assert!((r.statistic - oracle).abs() < 1e-10 * oracle.abs().max(1.0));
    }

    #[test]
    fn sup_score_examples() {
        let d = design_from(&[1.0, 1.0], DMatrix::from_element(2, 1, 1.0), false);
        let r = sup_score_bcch(&d, 0.0, 0.05).unwrap();
        assert!((r.statistic - 2f64.sqrt()).abs() < 1e-12);
        assert!((r.critical_value - 1.1 * 1.959_963_984_540_054).abs() < 1e-9);
        assert!(!r.reject);
        // e orthogonal to the column.
        let d = design_from(&[1.0, -1.0], DMatrix::from_element(2, 1, 1.0), false);
        assert_eq!(sup_score_bcch(&d, 0.0, 0.05).unwrap().statistic, 0.0);
        // A dead column is dropped and K shrinks for the quantile.
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]);
        let d = design_from(&[0.0, 2.0], z, true);
        let r = sup_score_bcch(&d, 0.0, 0.05).unwrap();
        assert_eq!(r.meta.instruments_used, Some(1));
    }

    #[test]
    fn ct_examples() {
        let d = design_from(&[1.0, 1.0], DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), true);
        let r = ct_test(&d, 0.0, 0.05, 200, 1).unwrap();
        let expect = 2.0 * (1.0 / 1.05) / (1.0 - 1.0 / 1.05 + 1.0);
        assert!((r.statistic - expect).abs() < 1e-12);
        assert!((r.statistic - 1.8182).abs() < 1e-4);
        // e in the null space of P: zero statistic.
        let d = design_from(&[0.0, 1.0], DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), true);
        assert_eq!(ct_test(&d, 0.0, 0.05, 50, 1).unwrap().statistic, 0.0);
        let d = design_from(&[0.0, 0.0], DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), true);
        assert_eq!(ct_test(&d, 0.0, 0.05, 50, 1).unwrap_err(), Error::DegenerateDenominator);
    }

    #[test]
    fn ct_bootstrap_is_deterministic() {
        let d = random_design(11, 50, 6);
        let a = ct_test(&d, 0.0, 0.05, 300, 4).unwrap();
        let b = ct_test(&d, 0.0, 0.05, 300, 4).unwrap();
        assert_eq!(a, b);
        let c = ct_test(&d, 0.0, 0.05, 300, 5).unwrap();
        assert_ne!(a.critical_value, c.critical_value);
    }
}
