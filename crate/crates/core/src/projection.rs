//! Linear-algebra kernel: partialling out controls, the thin SVD of the
//! instrument matrix, and the ridge projection family
//! `P_θ = Z (Z'Z + θ I)^{-1} Z'` evaluated through the SVD factors.
//!
//! Every `P_θ` shares the left singular vectors of `Z`; only the shrinkage
//! weights `s²/(s²+θ)` change with `θ`. Diagonals, row masses and `K_θ` are
//! therefore computed in `O(n·r)` without forming the `n × n` matrix.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Untransformed data: outcome, endogenous regressor, controls and instruments.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub y: DVector<f64>,
    pub x: DVector<f64>,
    /// Exogenous controls, `n × L`. May have zero columns.
    pub w: DMatrix<f64>,
    /// Instruments, `n × K`.
    pub z: DMatrix<f64>,
}

impl RawSample {
    pub fn new(y: DVector<f64>, x: DVector<f64>, w: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::DimensionMismatch(format!("need at least 2 observations, got {n}")));
        }
        if x.len() != n || w.nrows() != n || z.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "row counts differ: y={}, x={}, w={}, z={}",
                n,
                x.len(),
                w.nrows(),
                z.nrows()
            )));
        }
        if z.ncols() == 0 {
            return Err(Error::DimensionMismatch("no instruments".into()));
        }
        Ok(Self { y, x, w, z })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// Data after the controls have been projected out: `Y = M_W Ỹ`, `X = M_W X̃`,
/// `Z = M_W Z̃`. This is what every test consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialledSample {
    y: DVector<f64>,
    x: DVector<f64>,
    z: DMatrix<f64>,
    standardized: bool,
}

impl PartialledSample {
    /// Wraps vectors that are already free of controls.
    pub fn new(y: DVector<f64>, x: DVector<f64>, z: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if n < 2 || x.len() != n || z.nrows() != n || z.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "y={}, x={}, z={}x{}",
                n,
                x.len(),
                z.nrows(),
                z.ncols()
            )));
        }
        Ok(Self { y, x, z, standardized: false })
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    /// Whether the instrument columns are flagged as already standardized.
    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Flags the instruments as standardized without touching them, which
    /// disables the automatic rescaling done by the scale-sensitive tests.
    pub fn assume_standardized(mut self) -> Self {
        self.standardized = true;
        self
    }

    /// Rescales every instrument column to unit mean square.
    pub fn standardized(&self) -> Result<Self> {
        let n = self.n() as f64;
        let mut z = self.z.clone();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            let ms = col.norm_squared() / n;
            if ms <= 0.0 || !ms.is_finite() {
                return Err(Error::ZeroColumn(j));
            }
            col /= ms.sqrt();
        }
        Ok(Self { y: self.y.clone(), x: self.x.clone(), z, standardized: true })
    }

    pub(crate) fn ensure_standardized(&self) -> Result<std::borrow::Cow<'_, Self>> {
        if self.standardized {
            Ok(std::borrow::Cow::Borrowed(self))
        } else {
            self.standardized().map(std::borrow::Cow::Owned)
        }
    }

    /// Restricted residuals `e(β₀) = Y − X β₀`.
    pub fn residuals(&self, beta0: f64) -> DVector<f64> {
        &self.y - &self.x * beta0
    }
}

fn rank_tolerance(s_max: f64, rows: usize, cols: usize) -> f64 {
    s_max * rows.max(cols) as f64 * f64::EPSILON
}

/// Projects the controls out of `Y`, `X` and every column of `Z`.
pub fn partial_out(raw: &RawSample) -> Result<PartialledSample> {
    let n = raw.n();
    let l = raw.w.ncols();
    if l == 0 {
        return PartialledSample::new(raw.y.clone(), raw.x.clone(), raw.z.clone());
    }
    if l > n {
        return Err(Error::RankDeficientControls { rank: n, columns: l });
    }
    let svd = raw.w.clone().svd(true, false);
    let s = &svd.singular_values;
    let s_max = s.max();
    let tol = rank_tolerance(s_max, n, l);
    let rank = s.iter().filter(|&&v| v > tol).count();
    if rank < l || s_max == 0.0 {
        return Err(Error::RankDeficientControls { rank, columns: l });
    }
    if rank == n {
        // M_W = 0.
        return PartialledSample::new(
            DVector::zeros(n),
            DVector::zeros(n),
            DMatrix::zeros(n, raw.z.ncols()),
        );
    }
    let u = svd.u.expect("requested U");
    let annihilate = |v: &DMatrix<f64>| -> DMatrix<f64> {
        let coef = u.transpose() * v;
        v - &u * coef
    };
    let y = annihilate(&DMatrix::from_column_slice(n, 1, raw.y.as_slice()));
    let x = annihilate(&DMatrix::from_column_slice(n, 1, raw.x.as_slice()));
    let z = annihilate(&raw.z);
    PartialledSample::new(y.column(0).into_owned(), x.column(0).into_owned(), z)
}

/// Thin SVD of the instrument matrix truncated at its numerical rank.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    u: DMatrix<f64>,
    s: DVector<f64>,
    /// Elementwise square of `u`; diagonals and row masses are `u_sq · weights`.
    u_sq: DMatrix<f64>,
    k: usize,
}

impl SvdFactors {
    /// Left singular vectors, `n × r`.
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Singular values, strictly positive and descending.
    pub fn singular_values(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    /// Column count of the factorized matrix.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn s_min(&self) -> f64 {
        self.s[self.s.len() - 1]
    }

    /// Shrinkage weights `s²/(s²+θ)` of `P_θ` along each singular direction.
    pub fn shrinkage(&self, theta: f64) -> DVector<f64> {
        self.s.map(|s| {
            let s2 = s * s;
            s2 / (s2 + theta)
        })
    }

    /// Diagonal of `P_θ` and the full row sums of squares `Σ_j P²_ij`.
    pub(crate) fn diag_and_row_mass(&self, weights: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let w2 = weights.map(|w| w * w);
        (&self.u_sq * weights, &self.u_sq * w2)
    }
}

/// Thin SVD of `z`, dropping singular values at or below
/// `s_max · max(n, K) · ε`.
pub fn svd_factorize(z: &DMatrix<f64>) -> Result<SvdFactors> {
    if z.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let (n, k) = z.shape();
    let svd = z.clone().svd(true, false);
    let s_all = svd.singular_values;
    let s_max = s_all[0];
    let tol = rank_tolerance(s_max, n, k);
    let r = s_all.iter().take_while(|&&v| v > tol).count();
    let u = svd.u.expect("requested U").columns(0, r).into_owned();
    let s = s_all.rows(0, r).into_owned();
    let u_sq = u.map(|v| v * v);
    Ok(SvdFactors { u, s, u_sq, k })
}

/// `θ̄ = ‖Z'Z‖_op = s_max²`.
pub fn operator_norm_bound(f: &SvdFactors) -> f64 {
    f.s[0] * f.s[0]
}

#[derive(Debug, Clone)]
enum Repr {
    Factored { factors: Arc<SvdFactors>, weights: DVector<f64> },
    Dense(DMatrix<f64>),
}

/// A symmetric smoother matrix together with the summaries the tests need.
///
/// Usually a member of the ridge family built from [`SvdFactors`]; an explicit
/// matrix can also be supplied with [`RidgeProjection::from_matrix`].
#[derive(Debug, Clone)]
pub struct RidgeProjection {
    theta: f64,
    repr: Repr,
    diag: DVector<f64>,
    /// `Σ_{j≠i} P²_ij` for every row.
    off_row_mass: DVector<f64>,
    k_theta: f64,
}

/// Values of `K_θ` at or below this fraction of `‖P‖²_F` are rounding noise.
fn k_floor(n: usize, frobenius_sq: f64) -> f64 {
    4.0 * n as f64 * f64::EPSILON * frobenius_sq
}

impl RidgeProjection {
    /// Wraps an explicit symmetric matrix.
    pub fn from_matrix(p: DMatrix<f64>) -> Result<Self> {
        let (n, m) = p.shape();
        if n != m || n == 0 {
            return Err(Error::DimensionMismatch(format!("projection must be square, got {n}x{m}")));
        }
        let scale = p.amax().max(1.0);
        if (&p - p.transpose()).amax() > 1e-10 * scale {
            return Err(Error::InvalidConfig("projection matrix is not symmetric".into()));
        }
        let diag = p.diagonal();
        let off_row_mass = DVector::from_iterator(
            n,
            (0..n).map(|i| p.row(i).iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v * v).sum()),
        );
        let fro = p.norm_squared();
        let mut k_theta = off_row_mass.sum();
        if k_theta <= k_floor(n, fro) {
            k_theta = 0.0;
        }
        Ok(Self { theta: f64::NAN, repr: Repr::Dense(p), diag, off_row_mass, k_theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// `P_ii` for every observation.
    pub fn diag(&self) -> &DVector<f64> {
        &self.diag
    }

    /// `Σ_{j≠i} P²_ij` for every observation.
    pub fn off_row_mass(&self) -> &DVector<f64> {
        &self.off_row_mass
    }

    /// Off-diagonal squared Frobenius mass `K_θ = Σ_{i≠j} P²_ij`.
    pub fn k_theta(&self) -> f64 {
        self.k_theta
    }

    /// Materializes the `n × n` matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Dense(p) => p.clone(),
            Repr::Factored { factors, weights } => {
                let mut uw = factors.u.clone();
                for (mut col, w) in uw.column_iter_mut().zip(weights.iter()) {
                    col *= *w;
                }
                &uw * factors.u.transpose()
            }
        }
    }

    /// `P v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.repr {
            Repr::Dense(p) => p * v,
            Repr::Factored { factors, weights } => {
                let c = (factors.u.transpose() * v).component_mul(weights);
                &factors.u * c
            }
        }
    }

    /// `v' P v`.
    pub fn quadratic_form(&self, v: &DVector<f64>) -> f64 {
        match &self.repr {
            Repr::Dense(p) => v.dot(&(p * v)),
            Repr::Factored { factors, weights } => {
                let c = factors.u.transpose() * v;
                c.iter().zip(weights.iter()).map(|(c, w)| w * c * c).sum()
            }
        }
    }

    /// `Σ_{i≠j} v_i P_ij v_j`.
    pub fn off_diagonal_form(&self, v: &DVector<f64>) -> f64 {
        let own: f64 = v.iter().zip(self.diag.iter()).map(|(v, d)| d * v * v).sum();
        self.quadratic_form(v) - own
    }

    /// [`quadratic_form`](Self::quadratic_form) of every column of `v`.
    pub fn quadratic_forms(&self, v: &DMatrix<f64>) -> Vec<f64> {
        match &self.repr {
            Repr::Dense(p) => {
                let pv = p * v;
                pv.column_iter().zip(v.column_iter()).map(|(a, b)| a.dot(&b)).collect()
            }
            Repr::Factored { factors, weights } => {
                let c = factors.u.transpose() * v;
                c.column_iter()
                    .map(|col| col.iter().zip(weights.iter()).map(|(c, w)| w * c * c).sum())
                    .collect()
            }
        }
    }

    /// [`off_diagonal_form`](Self::off_diagonal_form) of every column of `v`.
    pub fn off_diagonal_forms(&self, v: &DMatrix<f64>) -> Vec<f64> {
        self.quadratic_forms(v)
            .into_iter()
            .zip(v.column_iter())
            .map(|(q, col)| q - col.iter().zip(self.diag.iter()).map(|(v, d)| d * v * v).sum::<f64>())
            .collect()
    }

    /// The same projection backed by an explicit matrix, for cross-checks.
    pub fn to_dense(&self) -> Self {
        Self {
            theta: self.theta,
            repr: Repr::Dense(self.matrix()),
            diag: self.diag.clone(),
            off_row_mass: self.off_row_mass.clone(),
            k_theta: self.k_theta,
        }
    }
}

/// `P_θ` from the SVD factors. At `θ = 0` this is `U U'` on the numerical
/// rank subspace, the pseudoinverse limit.
pub fn ridge_projection_at(f: &Arc<SvdFactors>, theta: f64) -> Result<RidgeProjection> {
    if theta < 0.0 || theta.is_nan() {
        return Err(Error::NegativeTheta(theta));
    }
    let weights = f.shrinkage(theta);
    let (diag, row_mass) = f.diag_and_row_mass(&weights);
    let fro: f64 = weights.iter().map(|w| w * w).sum();
    let mut k_theta = fro - diag.iter().map(|d| d * d).sum::<f64>();
    if k_theta <= k_floor(f.n(), fro) {
        k_theta = 0.0;
    }
    let off_row_mass = DVector::from_iterator(
        diag.len(),
        row_mass.iter().zip(diag.iter()).map(|(r, d)| (r - d * d).max(0.0)),
    );
    Ok(RidgeProjection {
        theta,
        repr: Repr::Factored { factors: Arc::clone(f), weights },
        diag,
        off_row_mass,
        k_theta,
    })
}

/// `K_θ = Σ_{i≠j} P²_ij`.
pub fn k_theta(p: &RidgeProjection) -> f64 {
    p.k_theta
}

/// The leverage ratios `p_n` and `q_n`. Both are `+∞` when `K_θ = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeverageDiagnostics {
    /// `max_i Σ_{j≠i} P²_ij / K_θ`.
    pub p_n: f64,
    /// `max_i P²_ii / K_θ`.
    pub q_n: f64,
}

impl LeverageDiagnostics {
    pub fn is_finite(&self) -> bool {
        self.p_n.is_finite() && self.q_n.is_finite()
    }
}

pub(crate) fn ratios(max_off: f64, max_diag_sq: f64, k_theta: f64) -> LeverageDiagnostics {
    if k_theta > 0.0 {
        LeverageDiagnostics { p_n: max_off / k_theta, q_n: max_diag_sq / k_theta }
    } else {
        LeverageDiagnostics { p_n: f64::INFINITY, q_n: f64::INFINITY }
    }
}

pub fn leverage_diagnostics(p: &RidgeProjection) -> LeverageDiagnostics {
    let max_off = p.off_row_mass.max();
    let max_diag_sq = p.diag.iter().map(|d| d * d).fold(0.0, f64::max);
    ratios(max_off, max_diag_sq, p.k_theta)
}
