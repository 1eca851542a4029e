//! Structured matrices of the space-time log-volatility process.
//!
//! With `S = I - rho1 W` and `A = rho2 I + rho3 W`, the stacked panel
//! `h = (h_1', ..., h_T')'` satisfies `J (h - 1_T (x) mu) = (S(h_1 - mu), U_2, ..., U_T)`,
//! where `J` is lower block-bidiagonal with `S` on the diagonal and `-A`
//! below it. Under a stationary start `Var(S(h_1 - mu)) = sigma2 K` with
//! `K = sum_j (A S^-1)^j (A S^-1)^j'`, so
//!
//! ```text
//! Omega^-1 = sigma2^-1 J' P^-1 J,   P = blockdiag(K, I, ..., I)
//! ```
//!
//! is block-tridiagonal. Everything downstream works with that precision
//! and never forms `Omega` densely.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{Cholesky, Complex, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::blocktri::BlockTridiagonal;
use crate::error::{Error, Result};
use crate::weights::WeightsMatrix;

/// Default number of terms kept in the series for `K`.
pub const DEFAULT_K_TRUNCATION: usize = 15;

/// Series terms whose largest entry falls below this are dropped, along with
/// everything after them.
pub const K_TERM_TOLERANCE: f64 = 1e-12;

/// Spatial, temporal and spatiotemporal spillover coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpilloverParams {
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
}

impl SpilloverParams {
    pub const fn new(rho1: f64, rho2: f64, rho3: f64) -> Self {
        SpilloverParams { rho1, rho2, rho3 }
    }

    pub const fn zero() -> Self {
        SpilloverParams::new(0.0, 0.0, 0.0)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.rho1, self.rho2, self.rho3]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        SpilloverParams::new(a[0], a[1], a[2])
    }

    /// Each coefficient lies in the open interval (-1, 1).
    pub fn in_unit_box(&self) -> bool {
        self.to_array().iter().all(|r| r.is_finite() && r.abs() < 1.0)
    }

    /// `|rho1| + |rho2| + |rho3| < 1`, which implies stability when `W` is
    /// row-normalized.
    pub fn sufficient_condition(&self) -> bool {
        self.rho1.abs() + self.rho2.abs() + self.rho3.abs() < 1.0
    }
}

pub fn check_sufficient(rho: &SpilloverParams) -> bool {
    rho.sufficient_condition()
}

/// Compressed-row sparse square matrix; only used for `S` and `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// `diag * I + off * W`
    fn affine(w: &WeightsMatrix, diag: f64, off: f64) -> Self {
        let n = w.n();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(w.nnz() + n);
        let mut values = Vec::with_capacity(w.nnz() + n);
        row_ptr.push(0);
        for i in 0..n {
            let mut diag_done = false;
            for (j, wij) in w.row(i) {
                if !diag_done && j > i {
                    col_idx.push(i);
                    values.push(diag);
                    diag_done = true;
                }
                col_idx.push(j);
                values.push(off * wij);
            }
            if !diag_done {
                col_idx.push(i);
                values.push(diag);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(p) => self.values[range.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[(i, self.col_idx[p])] += self.values[p];
            }
        }
        d
    }

    pub fn mul_slice(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[p] * x[self.col_idx[p]];
            }
            out[i] = acc;
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        self.mul_slice(x.as_slice(), out.as_mut_slice());
        out
    }
}

/// `S(rho1) = I - rho1 W`
pub fn build_s(rho1: f64, w: &WeightsMatrix) -> SparseMatrix {
    SparseMatrix::affine(w, 1.0, -rho1)
}

/// `A(rho2, rho3) = rho2 I + rho3 W`
pub fn build_a(rho2: f64, rho3: f64, w: &WeightsMatrix) -> SparseMatrix {
    SparseMatrix::affine(w, rho2, rho3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabilityCondition {
    /// `max |eig(rho1 W)| < 1`
    SpatialInvertibility,
    /// `max |eig(S^-1 A)| < 1`
    Transition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub stable: bool,
    /// `max |eig(rho1 W)|`
    pub spatial_radius: f64,
    /// `max |eig(S^-1 A)|`; infinite when `S` is singular.
    pub transition_radius: f64,
    pub failed: Option<StabilityCondition>,
}

impl StabilityReport {
    fn from_radii(spatial_radius: f64, transition_radius: f64) -> Self {
        let failed = if !(spatial_radius < 1.0) {
            Some(StabilityCondition::SpatialInvertibility)
        } else if !(transition_radius < 1.0) {
            Some(StabilityCondition::Transition)
        } else {
            None
        };
        StabilityReport {
            stable: failed.is_none(),
            spatial_radius,
            transition_radius,
            failed,
        }
    }
}

/// Checks both stationarity conditions.
///
/// `S^-1 A` is the rational function `f(x) = (rho2 + rho3 x) / (1 - rho1 x)`
/// of `W`, so its eigenvalues are `f` applied to the (cached) eigenvalues of
/// `W`; one decomposition of `W` serves every `rho`.
pub fn check_stability(rho: &SpilloverParams, w: &WeightsMatrix) -> Result<StabilityReport> {
    Ok(stability_from_spectrum(rho, w.spectrum()?))
}

pub fn stability_from_spectrum(rho: &SpilloverParams, spectrum: &[Complex<f64>]) -> StabilityReport {
    if !rho.to_array().iter().all(|r| r.is_finite()) {
        return StabilityReport::from_radii(f64::INFINITY, f64::INFINITY);
    }
    let mut spatial: f64 = 0.0;
    let mut transition: f64 = 0.0;
    for &lambda in spectrum {
        spatial = spatial.max((lambda * rho.rho1).norm());
        let denom = Complex::new(1.0, 0.0) - lambda * rho.rho1;
        let numer = lambda * rho.rho3 + rho.rho2;
        let dn = denom.norm();
        transition = if dn == 0.0 {
            f64::INFINITY
        } else {
            transition.max(numer.norm() / dn)
        };
    }
    StabilityReport::from_radii(spatial, transition)
}

/// Same check by forming `S^-1 A` densely and decomposing it. Cubic in `n`
/// per call; intended for verification.
pub fn check_stability_dense(rho: &SpilloverParams, w: &WeightsMatrix) -> Result<StabilityReport> {
    let wd = w.to_dense();
    let spatial = eigen_radius(&(&wd * rho.rho1))?;
    if !(spatial < 1.0) {
        return Ok(StabilityReport::from_radii(spatial, f64::INFINITY));
    }
    let s = build_s(rho.rho1, w).to_dense();
    let a = build_a(rho.rho2, rho.rho3, w).to_dense();
    let transition = match s.lu().solve(&a) {
        Some(m) => eigen_radius(&m)?,
        None => f64::INFINITY,
    };
    Ok(StabilityReport::from_radii(spatial, transition))
}

fn eigen_radius(m: &DMatrix<f64>) -> Result<f64> {
    let eig = crate::weights::eigenvalues(m)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

fn require_stable(rho: &SpilloverParams, w: &WeightsMatrix) -> Result<StabilityReport> {
    let report = check_stability(rho, w)?;
    if !report.stable {
        return Err(Error::Unstable {
            rho: rho.to_array(),
            reason: format!(
                "max|eig(rho1 W)| = {:.6}, max|eig(S^-1 A)| = {:.6}",
                report.spatial_radius, report.transition_radius
            ),
        });
    }
    Ok(report)
}

/// Truncated series `K = sum_{j=0}^{truncation} (A S^-1)^j (A S^-1)^j'`.
///
/// Stops early once a term's largest entry drops below
/// [`K_TERM_TOLERANCE`]. Fails for unstable `rho`, where the series diverges.
pub fn build_k(rho: &SpilloverParams, w: &WeightsMatrix, truncation: usize) -> Result<DMatrix<f64>> {
    require_stable(rho, w)?;
    let s = build_s(rho.rho1, w).to_dense();
    let a = build_a(rho.rho2, rho.rho3, w).to_dense();
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Numerical("S(rho1) is singular".into()))?;
    Ok(k_series(&(&a * &s_inv), truncation)?.0)
}

/// Returns the series and the number of nonzero-order terms actually added.
fn k_series(b: &DMatrix<f64>, truncation: usize) -> Result<(DMatrix<f64>, usize)> {
    let n = b.nrows();
    let mut k = DMatrix::identity(n, n);
    let mut power = DMatrix::identity(n, n);
    let mut used = 0;
    for _ in 0..truncation {
        power = b * &power;
        let term = &power * power.transpose();
        let size = term.amax();
        if !size.is_finite() {
            return Err(Error::Numerical("K series diverged".into()));
        }
        k += &term;
        used += 1;
        if size < K_TERM_TOLERANCE {
            break;
        }
    }
    Ok((k, used))
}

/// Unit-variance (`sigma2 = 1`) precision blocks.
#[derive(Debug, Clone)]
struct UnitBlocks {
    /// `S' S`
    sts: DMatrix<f64>,
    /// `A' A`
    ata: DMatrix<f64>,
    /// `S' K^-1 S`
    stkis: DMatrix<f64>,
    /// `-A' S`, the block at (t, t+1).
    upper: DMatrix<f64>,
}

/// Everything that depends on `rho` alone, computed once per parameter value.
#[derive(Debug, Clone)]
pub struct SpaceTimeSystem {
    rho: SpilloverParams,
    n: usize,
    s: SparseMatrix,
    a: SparseMatrix,
    s_dense: DMatrix<f64>,
    a_dense: DMatrix<f64>,
    k: DMatrix<f64>,
    k_chol: Cholesky<f64, Dyn>,
    k_terms: usize,
    log_det_s: f64,
    log_det_k: f64,
    stability: StabilityReport,
    blocks: OnceLock<UnitBlocks>,
}

impl SpaceTimeSystem {
    pub fn new(rho: SpilloverParams, w: &WeightsMatrix, truncation: usize) -> Result<Self> {
        let stability = require_stable(&rho, w)?;
        let n = w.n();
        let s = build_s(rho.rho1, w);
        let a = build_a(rho.rho2, rho.rho3, w);
        let s_dense = s.to_dense();
        let a_dense = a.to_dense();

        let lu = s_dense.clone().lu();
        let log_det_s = {
            let u = lu.u();
            (0..n).map(|i| u[(i, i)].abs().ln()).sum::<f64>()
        };
        let s_inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Numerical("S(rho1) is singular".into()))?;
        let (k, k_terms) = k_series(&(&a_dense * &s_inv), truncation)?;
        let k_chol = Cholesky::new(k.clone()).ok_or_else(|| {
            let eig = k.clone().symmetric_eigenvalues();
            let (lo, hi) = eig
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
            Error::Numerical(format!(
                "K(rho) is not positive definite (eigenvalue range [{lo:e}, {hi:e}], condition ~ {:e})",
                hi / lo.abs()
            ))
        })?;
        let log_det_k = 2.0 * k_chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();

        Ok(SpaceTimeSystem {
            rho,
            n,
            s,
            a,
            s_dense,
            a_dense,
            k,
            k_chol,
            k_terms,
            log_det_s,
            log_det_k,
            stability,
            blocks: OnceLock::new(),
        })
    }

    pub fn rho(&self) -> SpilloverParams {
        self.rho
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> &SparseMatrix {
        &self.s
    }

    pub fn a(&self) -> &SparseMatrix {
        &self.a
    }

    pub fn s_dense(&self) -> &DMatrix<f64> {
        &self.s_dense
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn k_cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.k_chol
    }

    /// Number of `j >= 1` terms that went into `K`.
    pub fn k_terms(&self) -> usize {
        self.k_terms
    }

    pub fn log_det_s(&self) -> f64 {
        self.log_det_s
    }

    pub fn log_det_k(&self) -> f64 {
        self.log_det_k
    }

    pub fn stability(&self) -> StabilityReport {
        self.stability
    }

    fn unit_blocks(&self) -> &UnitBlocks {
        self.blocks.get_or_init(|| {
            let s = &self.s_dense;
            let a = &self.a_dense;
            let kis = self.k_chol.solve(s);
            UnitBlocks {
                sts: s.tr_mul(s),
                ata: a.tr_mul(a),
                stkis: s.tr_mul(&kis),
                upper: -a.tr_mul(s),
            }
        })
    }

    /// Block-tridiagonal precision of `h` for `t_len` periods.
    pub fn precision_blocks(&self, sigma2: f64, t_len: usize) -> Result<PrecisionBlocks> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
        }
        if t_len == 0 {
            return Err(Error::InvalidDimension("T must be at least 1".into()));
        }
        let u = self.unit_blocks();
        let first = if t_len == 1 {
            u.stkis.clone()
        } else {
            &u.stkis + &u.ata
        };
        Ok(PrecisionBlocks {
            n: self.n,
            t_len,
            first,
            middle: &u.sts + &u.ata,
            last: u.sts.clone(),
            upper: u.upper.clone(),
            sigma2,
        })
    }

    /// Innovations `e_1 = S x_1`, `e_t = S x_t - A x_{t-1}` of a centred
    /// panel `x` (`n x T`, column `t` is period `t`).
    pub fn innovations(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, t_len) = x.shape();
        assert_eq!(n, self.n);
        let mut e = DMatrix::zeros(n, t_len);
        let mut buf = vec![0.0; n];
        for t in 0..t_len {
            self.s.mul_slice(x.column(t).as_slice(), e.column_mut(t).as_mut_slice());
            if t > 0 {
                self.a.mul_slice(x.column(t - 1).as_slice(), &mut buf);
                for (ei, bi) in e.column_mut(t).iter_mut().zip(&buf) {
                    *ei -= bi;
                }
            }
        }
        e
    }

    /// `x' J' P^-1 J x` for a centred panel `x`, i.e. the precision
    /// quadratic form with `sigma2 = 1`.
    pub fn quad_form(&self, x: &DMatrix<f64>) -> f64 {
        let e = self.innovations(x);
        let e1 = e.column(0).clone_owned();
        let mut q = e1.dot(&self.k_chol.solve(&e1));
        for t in 1..e.ncols() {
            q += e.column(t).norm_squared();
        }
        q
    }

    /// `log N(h | 1_T (x) mu, Omega)` with `h` given as an `n x T` panel.
    pub fn log_density(&self, h: &DMatrix<f64>, mu: &DVector<f64>, sigma2: f64) -> f64 {
        let (n, t_len) = h.shape();
        let nt = (n * t_len) as f64;
        let mut dev = h.clone();
        for mut col in dev.column_iter_mut() {
            col -= mu;
        }
        let q = self.quad_form(&dev);
        -0.5 * nt * (2.0 * PI).ln() - 0.5 * nt * sigma2.ln() + t_len as f64 * self.log_det_s
            - 0.5 * self.log_det_k
            - 0.5 * q / sigma2
    }

    /// `log det Omega^-1 = -nT log sigma2 + 2T log|S| - log|K|`.
    pub fn log_det_precision(&self, sigma2: f64, t_len: usize) -> f64 {
        -((self.n * t_len) as f64) * sigma2.ln() + 2.0 * t_len as f64 * self.log_det_s
            - self.log_det_k
    }
}

/// Block-tridiagonal `Omega^-1`.
///
/// Diagonal blocks 2..T-1 coincide, so only the first, the shared middle
/// and the last are stored; all blocks are kept at `sigma2 = 1` and scaled
/// on access.
#[derive(Debug, Clone)]
pub struct PrecisionBlocks {
    n: usize,
    t_len: usize,
    first: DMatrix<f64>,
    middle: DMatrix<f64>,
    last: DMatrix<f64>,
    upper: DMatrix<f64>,
    sigma2: f64,
}

impl PrecisionBlocks {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Diagonal block `t` (0-based) at `sigma2 = 1`.
    pub fn unit_diag(&self, t: usize) -> &DMatrix<f64> {
        assert!(t < self.t_len);
        if t == 0 {
            &self.first
        } else if t + 1 == self.t_len {
            &self.last
        } else {
            &self.middle
        }
    }

    /// Block `(t, t+1)` at `sigma2 = 1`; identical for every `t`.
    pub fn unit_upper(&self) -> &DMatrix<f64> {
        &self.upper
    }

    pub fn diag_block(&self, t: usize) -> DMatrix<f64> {
        self.unit_diag(t) / self.sigma2
    }

    pub fn upper_block(&self) -> DMatrix<f64> {
        &self.upper / self.sigma2
    }

    pub fn to_block_tridiagonal(&self) -> BlockTridiagonal {
        let diag = (0..self.t_len).map(|t| self.diag_block(t)).collect();
        let lower = self.upper_block().transpose();
        let sub = (1..self.t_len).map(|_| lower.clone()).collect();
        BlockTridiagonal::new(diag, sub).expect("consistent block shapes")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.to_block_tridiagonal().to_dense()
    }

    /// `sum_{s,t} Omega*_{st}`, the `n x n` contraction `(1_T (x) I)' Omega^-1 (1_T (x) I)`.
    pub fn block_sum(&self) -> DMatrix<f64> {
        let mut total = DMatrix::zeros(self.n, self.n);
        for t in 0..self.t_len {
            total += self.unit_diag(t);
        }
        if self.t_len > 1 {
            let off = &self.upper + self.upper.transpose();
            total += off * (self.t_len - 1) as f64;
        }
        total / self.sigma2
    }

    /// `Omega^-1 x` for `x` as an `n x T` panel.
    pub fn mul_panel(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.n, self.t_len);
        for t in 0..self.t_len {
            let mut col = self.unit_diag(t) * x.column(t);
            if t > 0 {
                col += self.upper.tr_mul(&x.column(t - 1));
            }
            if t + 1 < self.t_len {
                col += &self.upper * x.column(t + 1);
            }
            y.set_column(t, &(col / self.sigma2));
        }
        y
    }

    /// `(1_T (x) I)' Omega^-1 x`: column sums of `Omega^-1 x` over periods.
    pub fn contract_panel(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let y = self.mul_panel(x);
        y.column_sum()
    }
}

/// Applies the general space-time filter
/// `(I - rho1 W) x_t - (rho2 I + rho3 W) x_{t-1}` to each period of `x`,
/// with `x_prev` standing in for the period before the first.
pub fn space_time_filter(
    rho: &SpilloverParams,
    w: &WeightsMatrix,
    x: &DMatrix<f64>,
    x_prev: &DVector<f64>,
) -> DMatrix<f64> {
    let s = build_s(rho.rho1, w);
    let a = build_a(rho.rho2, rho.rho3, w);
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for t in 0..x.ncols() {
        let lag = if t == 0 {
            x_prev.clone()
        } else {
            x.column(t - 1).clone_owned()
        };
        let col = s.mul_vec(&x.column(t).clone_owned()) - a.mul_vec(&lag);
        out.set_column(t, &col);
    }
    out
}
