//! A partialled sample with its instrument SVD, shared by every test that
//! runs on the same data.

use std::sync::{Arc, OnceLock};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::projection::{ridge_projection_at, svd_factorize, PartialledSample, RidgeProjection, SvdFactors};

#[derive(Debug)]
pub struct Design {
    sample: PartialledSample,
    factors: Arc<SvdFactors>,
    unregularized: OnceLock<Result<Arc<RidgeProjection>>>,
}

impl Design {
    /// Standardizes the instruments (unless the sample is flagged as already
    /// standardized) and factorizes them.
    pub fn new(sample: &PartialledSample) -> Result<Self> {
        let sample = sample.ensure_standardized()?.into_owned();
        let factors = Arc::new(svd_factorize(sample.z())?);
        Ok(Self { sample, factors, unregularized: OnceLock::new() })
    }

    pub fn sample(&self) -> &PartialledSample {
        &self.sample
    }

    pub fn factors(&self) -> &Arc<SvdFactors> {
        &self.factors
    }

    pub fn n(&self) -> usize {
        self.sample.n()
    }

    pub fn k(&self) -> usize {
        self.sample.k()
    }

    pub fn residuals(&self, beta0: f64) -> DVector<f64> {
        self.sample.residuals(beta0)
    }

    pub fn projection(&self, theta: f64) -> Result<RidgeProjection> {
        ridge_projection_at(&self.factors, theta)
    }

    /// `Z (Z'Z)^{-1} Z'`, defined only when `Z` has full column rank `K < n`.
    pub fn unregularized_projection(&self) -> Result<Arc<RidgeProjection>> {
        self.unregularized
            .get_or_init(|| {
                let (n, k, r) = (self.n(), self.k(), self.factors.rank());
                if k >= n || r < k {
                    return Err(Error::SingularGram { rank: r, columns: k, n });
                }
                ridge_projection_at(&self.factors, 0.0).map(Arc::new)
            })
            .clone()
    }
}
