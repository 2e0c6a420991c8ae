//! Simulation designs and the Monte Carlo harness behind the size tables,
//! regularizer averages and power curves.
//!
//! Replication `r` (1-based) draws everything from `derive_seed(master, r)`,
//! with separate substreams for instruments, structural errors and bootstrap
//! weights, so results do not depend on scheduling or thread count.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ar::{LambdaChoice, WeightLaw};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::projection::{partial_out, PartialledSample, RawSample};
use crate::regularizer::{gamma_star, scan_lambda, DEFAULT_GRID_SIZE};
use crate::result::{check_alpha, Method};
use crate::rng::{derive_seed, substream, StreamRole};
use crate::suite::{RunConfig, TestSuite};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Dkm,
    Hausman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstStage {
    Sparse,
    Dense,
    NotApplicable,
}

/// One simulation design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub family: Family,
    pub n: usize,
    pub k: usize,
    /// Concentration parameter `n π'π`. Fixed by `k` in the Hausman design.
    pub mu2: f64,
    pub first_stage: FirstStage,
    /// True coefficient.
    pub beta: f64,
    /// Hypothesized coefficient under test.
    pub beta0: f64,
}

/// Error covariance of `(ε, v)` in the DKM design.
const DKM_VAR_EPS: f64 = 2.0;
const DKM_COV: f64 = 1.2;

const HAUSMAN_RHO: f64 = 0.3;
const HAUSMAN_PHI: f64 = 0.3;
const HAUSMAN_SD_V2: f64 = 0.86;

impl DgpSpec {
    /// DKM design at `n = 100`, testing the true `β = 1`.
    pub fn dkm(k: usize, mu2: f64, first_stage: FirstStage) -> Self {
        Self { family: Family::Dkm, n: 100, k, mu2, first_stage, beta: 1.0, beta0: 1.0 }
    }

    /// Hausman design at `n = 200`, testing the true `β = 0`.
    pub fn hausman(k: usize) -> Self {
        let n = 200;
        let mu2 = hausman_pi_scale(k).map_or(f64::NAN, |c| n as f64 * k as f64 * c * c);
        Self { family: Family::Hausman, n, k, mu2, first_stage: FirstStage::NotApplicable, beta: 0.0, beta0: 0.0 }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        if self.family == Family::Hausman {
            self.mu2 = hausman_pi_scale(self.k).map_or(f64::NAN, |c| n as f64 * self.k as f64 * c * c);
        }
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_beta0(mut self, beta0: f64) -> Self {
        self.beta0 = beta0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("sample size must be at least 2, got {}", self.n)));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("at least one instrument is required".into()));
        }
        if !self.beta.is_finite() || !self.beta0.is_finite() {
            return Err(Error::InvalidConfig("beta and beta0 must be finite".into()));
        }
        match self.family {
            Family::Dkm => {
                if !(self.mu2 >= 0.0) || !self.mu2.is_finite() {
                    return Err(Error::InvalidConfig(format!("mu2 must be finite and nonnegative, got {}", self.mu2)));
                }
                dkm_kappa(self.k, self.first_stage).map(|_| ())
            }
            Family::Hausman => hausman_pi_scale(self.k).map(|_| ()),
        }
    }

    /// The first-stage coefficient vector `π` on the raw instruments.
    pub fn first_stage_coefficients(&self) -> Result<DVector<f64>> {
        self.validate()?;
        match self.family {
            Family::Dkm => {
                let kappa = dkm_kappa(self.k, self.first_stage)?;
                let zeta = (self.mu2 / (self.n as f64 * kappa.norm_squared())).sqrt();
                Ok(kappa * zeta)
            }
            Family::Hausman => Ok(DVector::from_element(self.k, hausman_pi_scale(self.k)?)),
        }
    }
}

fn dkm_kappa(k: usize, first_stage: FirstStage) -> Result<DVector<f64>> {
    if k == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let ones = match first_stage {
        FirstStage::Sparse if k >= 5 => 5,
        FirstStage::Sparse => {
            return Err(Error::InvalidSparsity(format!("sparse first stage needs K = 1 or K >= 5, got {k}")))
        }
        FirstStage::Dense => ((0.4 * k as f64).round() as usize).max(1),
        FirstStage::NotApplicable => {
            return Err(Error::InvalidSparsity("the DKM design needs a sparse or dense first stage".into()))
        }
    };
    Ok(DVector::from_fn(k, |i, _| if i < ones { 1.0 } else { 0.0 }))
}

fn hausman_pi_scale(k: usize) -> Result<f64> {
    match k {
        1 => Ok(0.6),
        k if k >= 10 => Ok(0.2 / (k as f64).sqrt()),
        k => Err(Error::UnsupportedK(k)),
    }
}

/// DKM design: `Y = Xβ + ε`, `X = Zπ + v`, `Z ~ N(0, I_K)`, `W = 1`.
pub fn gen_dkm(spec: &DgpSpec, seed: u64) -> Result<RawSample> {
    if spec.family != Family::Dkm {
        return Err(Error::InvalidConfig("gen_dkm called with a non-DKM spec".into()));
    }
    let pi = spec.first_stage_coefficients()?;
    let (n, k) = (spec.n, spec.k);
    let mut zr = substream(seed, StreamRole::Instruments, 0);
    let z = DMatrix::from_fn(n, k, |_, _| zr.sample::<f64, _>(StandardNormal));
    let mut er = substream(seed, StreamRole::StructuralErrors, 0);
    let sd_eps = DKM_VAR_EPS.sqrt();
    let b = DKM_COV / sd_eps;
    let c = (1.0 - b * b).sqrt();
    let mut eps = DVector::zeros(n);
    let mut v = DVector::zeros(n);
    for i in 0..n {
        let g1: f64 = er.sample(StandardNormal);
        let g2: f64 = er.sample(StandardNormal);
        eps[i] = sd_eps * g1;
        v[i] = b * g1 + c * g2;
    }
    let x = &z * &pi + v;
    let y = &x * spec.beta + eps;
    RawSample::new(y, x, DMatrix::from_element(n, 1, 1.0), z)
}

/// The latent draws behind one Hausman sample.
#[derive(Debug, Clone)]
pub struct HausmanDraws {
    pub z1: DVector<f64>,
    /// Instrument matrix built from `z1` and the dummies.
    pub z: DMatrix<f64>,
    pub v1: DVector<f64>,
    /// First-stage error `Exp(0.2) − 5`.
    pub u2: DVector<f64>,
    /// Structural error before the `√(1 + z₁²)` scaling.
    pub e: DVector<f64>,
}

impl HausmanDraws {
    /// Outcome error `√(1 + z₁²) e`.
    pub fn outcome_error(&self) -> DVector<f64> {
        self.e.zip_map(&self.z1, |e, z| (1.0 + z * z).sqrt() * e)
    }
}

pub fn hausman_draws(spec: &DgpSpec, seed: u64) -> Result<HausmanDraws> {
    if spec.family != Family::Hausman {
        return Err(Error::InvalidConfig("Hausman draws requested for a non-Hausman spec".into()));
    }
    spec.validate()?;
    let (n, k) = (spec.n, spec.k);
    let mut zr = substream(seed, StreamRole::Instruments, 0);
    let z1 = DVector::from_fn(n, |_, _| 0.5 + zr.sample::<f64, _>(StandardNormal));
    let dummies = if k == 1 { 1 } else { k - 5 };
    let d = DMatrix::from_fn(n, dummies, |_, _| if zr.random::<bool>() { 1.0 } else { 0.0 });
    let z = DMatrix::from_fn(n, k, |i, j| {
        if k == 1 {
            z1[i] * d[(i, 0)]
        } else if j < 5 {
            z1[i].powi(j as i32 + 1)
        } else {
            z1[i] * d[(i, j - 5)]
        }
    });
    let mut er = substream(seed, StreamRole::StructuralErrors, 0);
    let exp = Exp::new(0.2).expect("positive rate");
    let scale = ((1.0 - HAUSMAN_RHO * HAUSMAN_RHO) / (HAUSMAN_PHI * HAUSMAN_PHI + HAUSMAN_SD_V2.powi(4))).sqrt();
    let mut v1 = DVector::zeros(n);
    let mut u2 = DVector::zeros(n);
    let mut e = DVector::zeros(n);
    for i in 0..n {
        // Arcsine law: sin²(πu/2) is Beta(1/2, 1/2) for uniform u.
        let beta_draw = (std::f64::consts::FRAC_PI_2 * er.random::<f64>()).sin().powi(2);
        v1[i] = z1[i] * (beta_draw - 0.5);
        let v2 = HAUSMAN_SD_V2 * er.sample::<f64, _>(StandardNormal);
        u2[i] = er.sample(exp) - 5.0;
        e[i] = HAUSMAN_RHO * u2[i] + scale * (HAUSMAN_PHI * v1[i] + HAUSMAN_SD_V2 * v2);
    }
    Ok(HausmanDraws { z1, z, v1, u2, e })
}

/// Hausman design: `Y = Xβ + 1 + √(1 + z₁²) e`, `X = Zπ + U₂`, `W = 1`.
pub fn gen_hausman(spec: &DgpSpec, seed: u64) -> Result<RawSample> {
    let draws = hausman_draws(spec, seed)?;
    let pi = spec.first_stage_coefficients()?;
    let x = &draws.z * &pi + &draws.u2;
    let y = &x * spec.beta + draws.outcome_error().add_scalar(1.0);
    RawSample::new(y, x, DMatrix::from_element(spec.n, 1, 1.0), draws.z)
}

pub fn generate(spec: &DgpSpec, seed: u64) -> Result<RawSample> {
    match spec.family {
        Family::Dkm => gen_dkm(spec, seed),
        Family::Hausman => gen_hausman(spec, seed),
    }
}

/// Rescales every instrument column to unit mean square.
pub fn standardize_instruments(sample: &PartialledSample) -> Result<PartialledSample> {
    sample.standardized()
}

/// Partials out the controls and standardizes the instruments.
pub fn prepare_design(raw: &RawSample) -> Result<Design> {
    Design::new(&partial_out(raw)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub replications: usize,
    pub bootstrap_draws: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub tests: Vec<Method>,
    pub beta_grid: Option<Vec<f64>>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            replications: 2000,
            bootstrap_draws: 2000,
            alpha: 0.05,
            master_seed: 1,
            tests: vec![Method::Bs],
            beta_grid: None,
        }
    }
}

impl MonteCarloConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if self.bootstrap_draws == 0 {
            return Err(Error::InvalidConfig("bootstrap draws must be at least 1".into()));
        }
        if self.tests.is_empty() {
            return Err(Error::InvalidConfig("no tests requested".into()));
        }
        Ok(())
    }

    /// Settings for replication `r`. The harness always falls back to λ = 0
    /// when no penalty meets the leverage constraints.
    fn run_config(&self, rep_seed: u64) -> RunConfig {
        RunConfig {
            alpha: self.alpha,
            draws: self.bootstrap_draws,
            weight_law: WeightLaw::Rademacher,
            seed: rep_seed,
            lambda: LambdaChoice::SelectOrZero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionRow {
    pub method: Method,
    #[serde(rename = "K")]
    pub k: usize,
    pub beta: f64,
    pub replications: usize,
    pub rejections: usize,
    pub failures: usize,
    /// Rejections over all replications; failed replications count as
    /// non-rejections.
    pub rejection_rate: f64,
    pub mc_se: f64,
    /// Mean λ (BS) or γ* (RJAR) over successful replications.
    pub mean_regularizer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionTable {
    pub schema_version: u32,
    pub spec: DgpSpec,
    pub config: MonteCarloConfig,
    pub rows: Vec<RejectionRow>,
}

pub const CSV_COLUMNS: [&str; 7] = ["method", "K", "beta", "rejection_rate", "mc_se", "mean_regularizer", "failures"];

impl RejectionTable {
    pub fn row(&self, method: Method) -> Option<&RejectionRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(CSV_COLUMNS).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.method.as_str().to_string(),
                r.k.to_string(),
                r.beta.to_string(),
                r.rejection_rate.to_string(),
                r.mc_se.to_string(),
                r.mean_regularizer.map(|v| v.to_string()).unwrap_or_default(),
                r.failures.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

/// Result of one method in one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Outcome {
    Done { reject: bool, regularizer: Option<f64> },
    Failed,
}

fn replicate(spec: &DgpSpec, mc: &MonteCarloConfig, r: usize) -> Vec<Outcome> {
    let seed = derive_seed(mc.master_seed, r as u64);
    let design = match generate(spec, seed).and_then(|raw| prepare_design(&raw)) {
        Ok(d) => d,
        Err(_) => return vec![Outcome::Failed; mc.tests.len()],
    };
    let suite = TestSuite::new(&design, mc.run_config(seed));
    mc.tests
        .iter()
        .map(|&m| match suite.run(m, spec.beta0) {
            Ok(t) if t.statistic.is_nan() || t.critical_value.is_nan() => Outcome::Failed,
            Ok(t) => Outcome::Done { reject: t.reject, regularizer: t.meta.regularizer() },
            Err(_) => Outcome::Failed,
        })
        .collect()
}

pub(crate) fn tally(methods: &[Method], k: usize, beta: f64, outcomes: &[Vec<Outcome>]) -> Vec<RejectionRow> {
    let reps = outcomes.len();
    methods
        .iter()
        .enumerate()
        .map(|(j, &method)| {
            let (mut rejections, mut failures, mut reg_sum, mut reg_count) = (0, 0, 0.0, 0usize);
            for o in outcomes {
                match o[j] {
                    Outcome::Done { reject, regularizer } => {
                        rejections += reject as usize;
                        if let Some(v) = regularizer {
                            reg_sum += v;
                            reg_count += 1;
                        }
                    }
                    Outcome::Failed => failures += 1,
                }
            }
            let p = rejections as f64 / reps as f64;
            RejectionRow {
                method,
                k,
                beta,
                replications: reps,
                rejections,
                failures,
                rejection_rate: p,
                mc_se: (p * (1.0 - p) / reps as f64).sqrt(),
                mean_regularizer: (reg_count > 0).then(|| reg_sum / reg_count as f64),
            }
        })
        .collect()
}

fn rows_at(spec: &DgpSpec, mc: &MonteCarloConfig) -> Vec<RejectionRow> {
    let outcomes: Vec<Vec<Outcome>> = (1..=mc.replications).into_par_iter().map(|r| replicate(spec, mc, r)).collect();
    tally(&mc.tests, spec.k, spec.beta, &outcomes)
}

/// Null rejection rates of every requested test at `spec.beta0 = spec.beta`.
pub fn run_size_experiment(spec: &DgpSpec, mc: &MonteCarloConfig) -> Result<RejectionTable> {
    spec.validate()?;
    mc.validate()?;
    if spec.beta0 != spec.beta {
        return Err(Error::InvalidConfig(format!(
            "a size experiment tests the true value: beta0 = {} but beta = {}",
            spec.beta0, spec.beta
        )));
    }
    let rows = rows_at(spec, mc);
    Ok(RejectionTable { schema_version: SCHEMA_VERSION, spec: *spec, config: mc.clone(), rows })
}

/// Rejection rates of `H₀: β = spec.beta0` with data generated at each true
/// `β` in the grid. Every grid point reuses the same replication seeds.
pub fn run_power_curve(spec: &DgpSpec, mc: &MonteCarloConfig) -> Result<RejectionTable> {
    spec.validate()?;
    mc.validate()?;
    let grid = match &mc.beta_grid {
        Some(g) if !g.is_empty() => g,
        _ => return Err(Error::InvalidConfig("a power curve needs a nonempty beta grid".into())),
    };
    if grid.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidConfig("beta grid values must be finite".into()));
    }
    let rows = grid.iter().flat_map(|&b| rows_at(&spec.with_beta(b), mc)).collect();
    Ok(RejectionTable { schema_version: SCHEMA_VERSION, spec: *spec, config: mc.clone(), rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegularizerAverages {
    pub replications: usize,
    /// Mean selected λ, counting infeasible replications as λ = 0.
    pub mean_lambda: f64,
    pub mean_gamma_star: f64,
    /// Replications where no penalty met the leverage constraints.
    pub lambda_fallbacks: usize,
    pub failures: usize,
}

/// Average selected penalties over simulated designs, without running any
/// test.
pub fn regularizer_averages(spec: &DgpSpec, replications: usize, master_seed: u64) -> Result<RegularizerAverages> {
    spec.validate()?;
    if replications == 0 {
        return Err(Error::InvalidConfig("replications must be at least 1".into()));
    }
    let per_rep: Vec<Option<(f64, f64, bool)>> = (1..=replications)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(master_seed, r as u64);
            let design = generate(spec, seed).and_then(|raw| prepare_design(&raw)).ok()?;
            let sel = scan_lambda(design.factors(), DEFAULT_GRID_SIZE).ok()?;
            let g = gamma_star(design.factors());
            Some((sel.lambda_or_zero(), g.gamma_star, sel.lambda.is_none()))
        })
        .collect();
    let ok: Vec<_> = per_rep.iter().flatten().collect();
    let m = ok.len().max(1) as f64;
    Ok(RegularizerAverages {
        replications,
        mean_lambda: ok.iter().map(|t| t.0).sum::<f64>() / m,
        mean_gamma_star: ok.iter().map(|t| t.1).sum::<f64>() / m,
        lambda_fallbacks: ok.iter().filter(|t| t.2).count(),
        failures: replications - ok.len(),
    })
}
