//! Runs any of the seven tests on one design, preparing each method's
//! penalty at most once so many hypotheses can share it.

use std::sync::OnceLock;

use crate::ar::{BootstrapConfig, BsTest, LambdaChoice, WeightLaw};
use crate::competitors::{classical_ar, ct_test, jar_cf, jar_std, rjar_with, sup_score_bcch};
use crate::design::Design;
use crate::error::Result;
use crate::regularizer::{gamma_star, GammaStarSelection};
use crate::result::{Method, TestResult};

/// Settings shared by every method in a suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub alpha: f64,
    /// Bootstrap draws for the BS and CT tests.
    pub draws: usize,
    pub weight_law: WeightLaw,
    pub seed: u64,
    pub lambda: LambdaChoice,
}

impl Default for RunConfig {
    fn default() -> Self {
        let b = BootstrapConfig::default();
        Self { alpha: b.alpha, draws: b.draws, weight_law: b.weight_law, seed: b.seed, lambda: LambdaChoice::Select }
    }
}

impl RunConfig {
    pub fn bootstrap(&self) -> BootstrapConfig {
        BootstrapConfig { draws: self.draws, alpha: self.alpha, weight_law: self.weight_law, seed: self.seed }
    }
}

pub struct TestSuite<'a> {
    design: &'a Design,
    cfg: RunConfig,
    bs: OnceLock<Result<BsTest>>,
    gamma: OnceLock<GammaStarSelection>,
}

impl<'a> TestSuite<'a> {
    pub fn new(design: &'a Design, cfg: RunConfig) -> Self {
        Self { design, cfg, bs: OnceLock::new(), gamma: OnceLock::new() }
    }

    pub fn design(&self) -> &Design {
        self.design
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    /// The prepared BS test, or the error that preparing it raised.
    pub fn bs(&self) -> Result<&BsTest> {
        self.bs.get_or_init(|| BsTest::prepare(self.design, self.cfg.lambda)).as_ref().map_err(Clone::clone)
    }

    pub fn gamma_star(&self) -> &GammaStarSelection {
        self.gamma.get_or_init(|| gamma_star(self.design.factors()))
    }

    pub fn run(&self, method: Method, beta0: f64) -> Result<TestResult> {
        let (d, a) = (self.design, self.cfg.alpha);
        match method {
            Method::Bs => self.bs()?.run(d, beta0, &self.cfg.bootstrap()),
            Method::JarStd => jar_std(d, beta0, a),
            Method::JarCf => jar_cf(d, beta0, a),
            Method::Ar => classical_ar(d, beta0, a),
            Method::Rjar => rjar_with(d, self.gamma_star(), beta0, a),
            Method::Bcch => sup_score_bcch(d, beta0, a),
            Method::Ct => ct_test(d, beta0, a, self.cfg.draws, self.cfg.seed),
        }
    }
}
