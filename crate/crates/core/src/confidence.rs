//! Confidence sets by inverting a test over a grid of hypothesized values.
//!
//! The bootstrap seed is the same at every grid point, so the weights do not
//! depend on β₀ and the accepted region is a deterministic function of the
//! seed.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::result::Method;
use crate::suite::TestSuite;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceSet {
    pub method: Method,
    pub alpha: f64,
    pub grid: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Closed intervals between the endpoints of each maximal run of
    /// accepted grid points, ascending.
    pub intervals: Vec<[f64; 2]>,
    pub empty: bool,
}

impl ConfidenceSet {
    /// Whether `beta` lies in one of the reported intervals.
    pub fn covers(&self, beta: f64) -> bool {
        self.intervals.iter().any(|[lo, hi]| *lo <= beta && beta <= *hi)
    }
}

/// `points` equally spaced values from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return Err(Error::InvalidConfig(format!("grid needs finite lo < hi, got [{lo}, {hi}]")));
    }
    if points < 2 {
        return Err(Error::InvalidConfig(format!("grid needs at least 2 points, got {points}")));
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|i| if i == points - 1 { hi } else { lo + step * i as f64 }).collect())
}

/// Groups runs of accepted points of an ascending grid into intervals.
pub fn compact(grid: &[f64], accepted: &[bool]) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    let mut start: Option<f64> = None;
    for (i, (&b, &a)) in grid.iter().zip(accepted).enumerate() {
        match (a, start) {
            (true, None) => start = Some(b),
            (false, Some(s)) => {
                out.push([s, grid[i - 1]]);
                start = None;
            }
            _ => {}
        }
    }
    if let (Some(s), Some(&last)) = (start, grid.last()) {
        out.push([s, last]);
    }
    out
}

/// Runs `method` at every grid value and collects the non-rejected ones.
pub fn invert(suite: &TestSuite<'_>, method: Method, grid: &[f64]) -> Result<ConfidenceSet> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig("grid must be strictly increasing".into()));
    }
    let accepted = grid.iter().map(|&b| suite.run(method, b).map(|t| !t.reject)).collect::<Result<Vec<_>>>()?;
    let intervals = compact(grid, &accepted);
    Ok(ConfidenceSet {
        method,
        alpha: suite.config().alpha,
        grid: grid.to_vec(),
        empty: intervals.is_empty(),
        accepted,
        intervals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compaction_rules() {
        let g = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(compact(&g, &[true; 5]), vec![[0.0, 4.0]]);
        assert_eq!(compact(&g, &[false; 5]), Vec::<[f64; 2]>::new());
        assert_eq!(compact(&g, &[true, false, true, true, false]), vec![[0.0, 0.0], [2.0, 3.0]]);
        assert_eq!(compact(&g[..2], &[true, true]), vec![[0.0, 1.0]]);
    }

    #[test]
    fn grid_endpoints_exact() {
        let g = linear_grid(-0.3, 0.7, 11).unwrap();
        assert_eq!((g[0], g[10]), (-0.3, 0.7));
        assert!(linear_grid(1.0, 1.0, 5).is_err());
        assert!(linear_grid(0.0, 1.0, 1).is_err());
    }
}
