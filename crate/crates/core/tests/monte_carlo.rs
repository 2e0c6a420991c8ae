use daar::ar::{bootstrap_draws, BootstrapConfig};
use daar::competitors::classical_ar;
use daar::null_law::{null_spectrum_oracle, weighted_chi_square_draws};
use daar::rng::{derive_seed, substream, StreamRole};
use daar::simulation::{
    gen_dkm, hausman_draws, regularizer_averages, run_power_curve, DgpSpec, FirstStage, MonteCarloConfig,
};
use daar::{Design, Method, PartialledSample};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

fn normal_matrix(seed: u64, role: StreamRole, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut rng = substream(seed, role, 0);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> (f64, f64) {
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let t = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let p = (1..=100).map(|k| 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k * k) as f64 * t * t).exp()).sum::<f64>();
    (d, p.clamp(0.0, 1.0))
}

#[test]
fn dkm_error_covariance() {
    let spec = DgpSpec::dkm(1, 180.0, FirstStage::Sparse).with_n(1_000_000);
    let raw = gen_dkm(&spec, 4).unwrap();
    let eps = &raw.y - &raw.x * spec.beta;
    let v = &raw.x - &raw.z * spec.first_stage_coefficients().unwrap();
    let n = spec.n as f64;
    let (me, mv) = (eps.mean(), v.mean());
    let cov = |a: &DVector<f64>, ma: f64, b: &DVector<f64>, mb: f64| a.add_scalar(-ma).dot(&b.add_scalar(-mb)) / (n - 1.0);
    assert!((cov(&eps, me, &eps, me) - 2.0).abs() < 0.01);
    assert!((cov(&eps, me, &v, mv) - 1.2).abs() < 0.01);
    assert!((cov(&v, mv, &v, mv) - 1.0).abs() < 0.01);
}

#[test]
fn hausman_first_stage_errors_are_centered() {
    let draws = hausman_draws(&DgpSpec::hausman(10).with_n(1_000_000), 6).unwrap();
    assert!(draws.u2.mean().abs() < 0.02, "U2 mean {}", draws.u2.mean());
    assert!(draws.v1.mean().abs() < 0.005, "v1 mean {}", draws.v1.mean());
}

#[test]
fn hausman_outcome_error_variance_grows_with_z1() {
    let draws = hausman_draws(&DgpSpec::hausman(10).with_n(100_000), 7).unwrap();
    let u = draws.outcome_error();
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_unstable_by(|&a, &b| draws.z1[a].total_cmp(&draws.z1[b]));
    let (xs, ys): (Vec<f64>, Vec<f64>) = order
        .chunks(2000)
        .map(|bin| {
            let h: Vec<f64> = bin.iter().map(|&i| 1.0 + draws.z1[i] * draws.z1[i]).collect();
            let e: Vec<f64> = bin.iter().map(|&i| u[i]).collect();
            let m = mean(&e);
            (mean(&h), e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (e.len() - 1) as f64)
        })
        .unzip();
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx;
    let resid: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    let se = (resid / (xs.len() - 2) as f64 / sxx).sqrt();
    assert!(slope > 0.0 && slope / se > 5.0, "slope {slope}, t {}", slope / se);
}

#[test]
fn bootstrap_draws_have_mean_zero() {
    let spec = DgpSpec::dkm(10, 180.0, FirstStage::Sparse).with_n(200);
    let design = daar::simulation::prepare_design(&gen_dkm(&spec, 9).unwrap()).unwrap();
    let p = design.projection(5.0).unwrap();
    let e = design.residuals(1.0);
    let b = 100_000;
    let draws = bootstrap_draws(&e, &p, &BootstrapConfig { draws: b, seed: 10, ..BootstrapConfig::default() }).unwrap();
    let m = mean(&draws);
    let sd = (draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (b - 1) as f64).sqrt();
    assert!(m.abs() <= 5.0 * sd / (b as f64).sqrt(), "mean {m}, sd {sd}");
}

#[test]
fn statistic_follows_the_weighted_chi_square_law() {
    let n = 10;
    let z = normal_matrix(11, StreamRole::Instruments, n, 3);
    let sample = PartialledSample::new(DVector::zeros(n), DVector::zeros(n), z).unwrap();
    let p = Design::new(&sample).unwrap().projection(0.5).unwrap();
    let weights = null_spectrum_oracle(&p, &vec![1.0; n]).unwrap();
    let draws = 100_000;
    let oracle = weighted_chi_square_draws(&weights, draws, 12);
    let root_k = p.k_theta().sqrt();
    let stats: Vec<f64> = (0..draws.div_ceil(4096))
        .into_par_iter()
        .flat_map_iter(|blk| {
            let width = 4096.min(draws - blk * 4096);
            let e = normal_matrix(derive_seed(13, blk as u64), StreamRole::StructuralErrors, n, width);
            p.off_diagonal_forms(&e).into_iter().map(move |v| v / root_k)
        })
        .collect();
    let (d, pval) = ks_two_sample(stats, oracle);
    assert!(pval > 0.01, "KS distance {d}, p {pval}");
}

#[test]
fn classical_ar_size_under_homoskedastic_null() {
    let (n, reps) = (5000, 2000);
    let rejections: usize = (1..=reps as u64)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(14, r);
            let z = normal_matrix(seed, StreamRole::Instruments, n, 2);
            let x = normal_matrix(seed, StreamRole::Auxiliary, n, 1).column(0).into_owned();
            let e = normal_matrix(seed, StreamRole::StructuralErrors, n, 1).column(0).into_owned();
            let sample = PartialledSample::new(&x + e, x, z).unwrap();
            let design = Design::new(&sample).unwrap();
            classical_ar(&design, 1.0, 0.05).unwrap().reject as usize
        })
        .sum();
    let rate = rejections as f64 / reps as f64;
    assert!((0.035..=0.065).contains(&rate), "rate {rate}");
}

#[test]
fn power_exceeds_size_away_from_the_null() {
    let spec = DgpSpec::dkm(5, 180.0, FirstStage::Sparse);
    let mc = MonteCarloConfig {
        replications: 500,
        bootstrap_draws: 499,
        master_seed: 15,
        tests: vec![Method::Bs],
        beta_grid: Some(vec![0.5, 1.0, 2.0]),
        ..MonteCarloConfig::default()
    };
    let table = run_power_curve(&spec, &mc).unwrap();
    let rate = |beta: f64| table.rows.iter().find(|r| r.beta == beta).unwrap().rejection_rate;
    assert!(rate(2.0) > rate(1.0), "power {} vs size {}", rate(2.0), rate(1.0));
}

#[test]
fn mean_lambda_single_instrument() {
    let avg = regularizer_averages(&DgpSpec::dkm(1, 180.0, FirstStage::Sparse), 2000, 16).unwrap();
    assert_eq!(avg.failures, 0);
    assert!((avg.mean_lambda / 92.2 - 1.0).abs() < 0.1, "mean lambda {}", avg.mean_lambda);
}
