//! Bootstrap Anderson-Rubin inference with many, possibly weak, instruments.
//!
//! The central test is [`ar::BsTest`]: a ridge-regularized quadratic form in
//! the restricted residuals, calibrated by a multiplier bootstrap. The
//! remaining modules supply the benchmark tests, a Monte Carlo harness,
//! confidence-set inversion and CSV ingestion.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ar;
pub mod competitors;
pub mod confidence;
pub mod data;
pub mod design;
pub mod error;
pub mod null_law;
pub mod projection;
pub mod quantile;
pub mod regularizer;
pub mod result;
pub mod rng;
pub mod simulation;
pub mod suite;

pub use ar::{BootstrapConfig, BsTest, Hypothesis, LambdaChoice, WeightLaw};
pub use design::Design;
pub use error::{Error, Result};
pub use projection::{partial_out, PartialledSample, RawSample, RidgeProjection};
pub use result::{Method, TestMeta, TestResult};
pub use simulation::{DgpSpec, MonteCarloConfig, RejectionTable};
pub use suite::{RunConfig, TestSuite};
