//! The dimension-agnostic bootstrap AR test.
//!
//! The statistic is the jackknifed quadratic form
//! `Q̂(β₀) = Σ_{i≠j} e_i P_{λ,ij} e_j / √K_λ` of the restricted residuals.
//! Its critical value is the `(1−α)` order statistic of the multiplier
//! bootstrap draws `Q̂*(β₀)`, obtained by replacing `e_i` with `η_i e_i` for
//! i.i.d. mean-zero, unit-variance weights `η_i`.
//!
//! Bootstrap draw `d` always uses the stream `(seed, BootstrapWeights, d)`,
//! so the critical value does not depend on how draws are scheduled and the
//! same weights are reused across hypotheses.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::projection::{leverage_diagnostics, PartialledSample, RidgeProjection};
use crate::regularizer::{scan_lambda, DEFAULT_GRID_SIZE};
use crate::result::{check_alpha, Method, TestMeta, TestResult};
use crate::rng::{substream, StreamRole};

/// H₀: β = β₀.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypothesis {
    pub beta0: f64,
}

impl Hypothesis {
    pub fn new(beta0: f64) -> Result<Self> {
        if beta0.is_finite() {
            Ok(Self { beta0 })
        } else {
            Err(Error::InvalidConfig(format!("beta0 must be finite, got {beta0}")))
        }
    }
}

/// Law of the bootstrap multipliers `η_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightLaw {
    #[default]
    Rademacher,
    StandardNormal,
    /// `η ≡ 1`; every draw equals the statistic. For testing only.
    DegenerateOne,
}

impl WeightLaw {
    pub fn as_str(&self) -> &'static str {
        match self {
            WeightLaw::Rademacher => "rademacher",
            WeightLaw::StandardNormal => "standard-normal",
            WeightLaw::DegenerateOne => "degenerate-one",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub draws: usize,
    pub alpha: f64,
    pub weight_law: WeightLaw,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { draws: 2000, alpha: 0.05, weight_law: WeightLaw::Rademacher, seed: 0 }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.draws == 0 {
            return Err(Error::InvalidConfig("bootstrap draws must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn residuals(sample: &PartialledSample, h: Hypothesis) -> DVector<f64> {
    sample.residuals(h.beta0)
}

/// `Q̂ = Σ_{i≠j} e_i P_ij e_j / √K`.
pub fn q_statistic(e: &DVector<f64>, p: &RidgeProjection) -> Result<f64> {
    if e.len() != p.n() {
        return Err(Error::DimensionMismatch(format!("residuals {} vs projection {}", e.len(), p.n())));
    }
    if p.k_theta() <= 0.0 {
        return Err(Error::ZeroKLambda);
    }
    // Same kernel as the batched bootstrap so that η ≡ 1 reproduces Q̂ bitwise.
    let v = DMatrix::from_column_slice(e.len(), 1, e.as_slice());
    Ok(p.off_diagonal_forms(&v)[0] / p.k_theta().sqrt())
}

/// One bootstrap statistic for the given multipliers.
pub fn bootstrap_draw(e: &DVector<f64>, p: &RidgeProjection, eta: &DVector<f64>) -> Result<f64> {
    if eta.len() != e.len() {
        return Err(Error::DimensionMismatch(format!("weights {} vs residuals {}", eta.len(), e.len())));
    }
    q_statistic(&e.component_mul(eta), p)
}

/// Fills `out` with the multipliers of bootstrap draw `draw`.
pub fn fill_weights(law: WeightLaw, seed: u64, draw: u64, out: &mut [f64]) {
    match law {
        WeightLaw::DegenerateOne => out.fill(1.0),
        WeightLaw::Rademacher => {
            let mut rng = substream(seed, StreamRole::BootstrapWeights, draw);
            for chunk in out.chunks_mut(64) {
                let bits: u64 = rng.random();
                for (i, v) in chunk.iter_mut().enumerate() {
                    *v = if (bits >> i) & 1 == 1 { 1.0 } else { -1.0 };
                }
            }
        }
        WeightLaw::StandardNormal => {
            let mut rng = substream(seed, StreamRole::BootstrapWeights, draw);
            for v in out.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
    }
}

const DRAW_BLOCK: usize = 128;

/// All `B` bootstrap statistics, in draw order.
pub fn bootstrap_draws(e: &DVector<f64>, p: &RidgeProjection, cfg: &BootstrapConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if e.len() != p.n() {
        return Err(Error::DimensionMismatch(format!("residuals {} vs projection {}", e.len(), p.n())));
    }
    if p.k_theta() <= 0.0 {
        return Err(Error::ZeroKLambda);
    }
    let n = e.len();
    let root_k = p.k_theta().sqrt();
    let blocks = cfg.draws.div_ceil(DRAW_BLOCK);
    let per_block: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * DRAW_BLOCK;
            let width = DRAW_BLOCK.min(cfg.draws - start);
            let mut v = DMatrix::<f64>::zeros(n, width);
            for (c, mut col) in v.column_iter_mut().enumerate() {
                let slice = col.as_mut_slice();
                fill_weights(cfg.weight_law, cfg.seed, (start + c) as u64, slice);
                for (x, ei) in slice.iter_mut().zip(e.iter()) {
                    *x *= ei;
                }
            }
            p.off_diagonal_forms(&v).into_iter().map(|q| q / root_k).collect()
        })
        .collect();
    Ok(per_block.into_iter().flatten().collect())
}

/// The ⌈(1−α)B⌉-th smallest draw (1-based).
pub fn upper_order_statistic(draws: &mut [f64], alpha: f64) -> f64 {
    assert!(!draws.is_empty(), "no bootstrap draws");
    draws.sort_unstable_by(f64::total_cmp);
    let b = draws.len();
    let target = (1.0 - alpha) * b as f64;
    // Guard against (1-α)·B landing a hair above an integer.
    let rank = ((target - 1e-9).ceil() as usize).clamp(1, b);
    draws[rank - 1]
}

pub fn critical_value(e: &DVector<f64>, p: &RidgeProjection, cfg: &BootstrapConfig) -> Result<f64> {
    let mut draws = bootstrap_draws(e, p, cfg)?;
    Ok(upper_order_statistic(&mut draws, cfg.alpha))
}

/// How the BS test chooses its penalty.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LambdaChoice {
    /// The leverage-constrained rule; infeasible instruments are an error.
    #[default]
    Select,
    /// The leverage-constrained rule, falling back to λ = 0 when no penalty
    /// is feasible.
    SelectOrZero,
    Fixed(f64),
}

/// The BS test with its projection fixed, reusable across hypotheses.
#[derive(Debug, Clone)]
pub struct BsTest {
    projection: RidgeProjection,
    meta: TestMeta,
}

impl BsTest {
    pub fn prepare(design: &Design, choice: LambdaChoice) -> Result<Self> {
        let factors = design.factors();
        let theta_bar = crate::projection::operator_norm_bound(factors);
        let (lambda, fallback) = match choice {
            LambdaChoice::Fixed(l) => (l, None),
            LambdaChoice::Select | LambdaChoice::SelectOrZero => {
                let sel = scan_lambda(factors, DEFAULT_GRID_SIZE)?;
                match (sel.lambda, choice) {
                    (Some(l), _) => (l, Some(false)),
                    (None, LambdaChoice::SelectOrZero) => (0.0, Some(true)),
                    (None, _) => return Err(Error::DegenerateInstruments { theta_bar }),
                }
            }
        };
        let projection = design.projection(lambda)?;
        if projection.k_theta() <= 0.0 {
            return Err(Error::ZeroKLambda);
        }
        let lev = leverage_diagnostics(&projection);
        let meta = TestMeta {
            lambda: Some(lambda),
            theta_bar: Some(theta_bar),
            lambda_fallback: fallback,
            k_lambda: Some(projection.k_theta()),
            p_n: Some(lev.p_n),
            q_n: Some(lev.q_n),
            ..TestMeta::default()
        };
        Ok(Self { projection, meta })
    }

    pub fn projection(&self) -> &RidgeProjection {
        &self.projection
    }

    pub fn lambda(&self) -> f64 {
        self.projection.theta()
    }

    pub fn run(&self, design: &Design, beta0: f64, cfg: &BootstrapConfig) -> Result<TestResult> {
        cfg.validate()?;
        let e = design.residuals(beta0);
        let statistic = q_statistic(&e, &self.projection)?;
        let cv = critical_value(&e, &self.projection, cfg)?;
        let meta = TestMeta {
            draws: Some(cfg.draws),
            seed: Some(cfg.seed),
            weight_law: Some(cfg.weight_law.as_str().to_string()),
            ..self.meta.clone()
        };
        Ok(TestResult::new(Method::Bs, beta0, statistic, cv, cfg.alpha, meta))
    }
}

/// Standardizes the instruments, picks λ (or uses `lambda_override`) and
/// runs the bootstrap test at `h`.
pub fn bs_test(
    sample: &PartialledSample,
    h: Hypothesis,
    cfg: &BootstrapConfig,
    lambda_override: Option<f64>,
) -> Result<TestResult> {
    let design = Design::new(sample)?;
    let choice = lambda_override.map_or(LambdaChoice::Select, LambdaChoice::Fixed);
    BsTest::prepare(&design, choice)?.run(&design, h.beta0, cfg)
}
