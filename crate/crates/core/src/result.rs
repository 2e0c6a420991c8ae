//! Test identifiers and the common result record.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The seven tests of H₀: β = β₀.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Ridge-regularized quadratic form with multiplier-bootstrap critical value.
    Bs,
    /// Jackknife AR with the standard variance estimator.
    JarStd,
    /// Jackknife AR with the cross-fit variance estimator.
    JarCf,
    /// Classical heteroskedasticity-robust AR (chi-square, fixed K).
    Ar,
    /// Ridge-regularized jackknife AR at the `K_γ`-maximizing penalty.
    Rjar,
    /// Sup-score test.
    Bcch,
    /// Regularized ratio statistic with residual bootstrap.
    Ct,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::Rjar, Method::JarStd, Method::JarCf, Method::Ar, Method::Bs, Method::Bcch, Method::Ct];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Bs => "bs",
            Method::JarStd => "jar-std",
            Method::JarCf => "jar-cf",
            Method::Ar => "ar",
            Method::Rjar => "rjar",
            Method::Bcch => "bcch",
            Method::Ct => "ct",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.as_str().eq_ignore_ascii_case(s) || m.as_str().replace('-', "_").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// Method-specific details carried alongside a decision.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TestMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_bar: Option<f64>,
    /// True when no penalty met the leverage constraints and λ = 0 was used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_fallback: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_n: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_n: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_law: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_clamped: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instruments_used: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ridge_theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_scheme: Option<String>,
}

impl TestMeta {
    /// The penalty this method chose from the data, if any.
    pub fn regularizer(&self) -> Option<f64> {
        self.lambda.or(self.gamma_star)
    }
}

/// A test decision: reject iff `statistic > critical_value`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub method: Method,
    pub beta0: f64,
    pub statistic: f64,
    pub critical_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub meta: TestMeta,
}

impl TestResult {
    pub fn new(method: Method, beta0: f64, statistic: f64, critical_value: f64, alpha: f64, meta: TestMeta) -> Self {
        Self { method, beta0, statistic, critical_value, reject: statistic > critical_value, alpha, meta }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> crate::error::Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}
