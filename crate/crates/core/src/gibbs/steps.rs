//! Conditional samplers for steps 1-4 of a sweep.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::PriorSpec;
use crate::blocktri::BlockCholesky;
use crate::error::{Error, Result};
use crate::mixture::{log_norm_consts, MIXTURE_TABLE, NUM_COMPONENTS};
use crate::spacetime::{PrecisionBlocks, SpaceTimeSystem};

/// Default offset added to `y^2` before taking logs.
pub const DEFAULT_ZERO_OFFSET: f64 = 1e-8;

/// Mixture component per `(site, period)`, stored 0-based (`0..10`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixtureState {
    n: usize,
    t_len: usize,
    z: Vec<u8>,
}

impl MixtureState {
    pub fn new(n: usize, t_len: usize, z: Vec<u8>) -> Result<Self> {
        if z.len() != n * t_len {
            return Err(Error::InvalidDimension(format!(
                "{} indicators for a {n}x{t_len} panel",
                z.len()
            )));
        }
        if z.iter().any(|&c| c as usize >= NUM_COMPONENTS) {
            return Err(Error::InvalidInput("indicator outside 0..10".into()));
        }
        Ok(MixtureState { n, t_len, z })
    }

    /// Component index (0-based) at `(site, period)`.
    pub fn get(&self, i: usize, t: usize) -> usize {
        self.z[t * self.n + i] as usize
    }

    /// Column-major indicators, matching the `n x T` panel layout.
    pub fn as_slice(&self) -> &[u8] {
        &self.z
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n, self.t_len)
    }

    /// Component means `d` as an `n x T` panel.
    pub fn means(&self) -> DMatrix<f64> {
        DMatrix::from_iterator(
            self.n,
            self.t_len,
            self.z.iter().map(|&c| MIXTURE_TABLE[c as usize].mean),
        )
    }

    /// Component variances as an `n x T` panel.
    pub fn variances(&self) -> DMatrix<f64> {
        DMatrix::from_iterator(
            self.n,
            self.t_len,
            self.z.iter().map(|&c| MIXTURE_TABLE[c as usize].var),
        )
    }
}

/// `y* = log(y^2 + offset)`
pub fn transform_outcome(y: &DMatrix<f64>, offset: f64) -> DMatrix<f64> {
    y.map(|v| (v * v + offset).ln())
}

/// Posterior component probabilities given the residual `y* - h`.
pub fn z_probabilities(resid: f64) -> [f64; NUM_COMPONENTS] {
    let consts = log_norm_consts();
    let mut logw: [f64; NUM_COMPONENTS] = std::array::from_fn(|j| {
        let c = &MIXTURE_TABLE[j];
        consts[j] - 0.5 * (resid - c.mean).powi(2) / c.var
    });
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let mut p = [0.0; NUM_COMPONENTS];
        p[nearest_component(resid)] = 1.0;
        return p;
    }
    let mut total = 0.0;
    for lw in logw.iter_mut() {
        *lw = (*lw - max).exp();
        total += *lw;
    }
    logw.map(|w| w / total)
}

fn nearest_component(resid: f64) -> usize {
    if resid.is_nan() {
        return 4;
    }
    if resid.is_infinite() {
        return if resid > 0.0 { 0 } else { NUM_COMPONENTS - 1 };
    }
    (0..NUM_COMPONENTS)
        .min_by(|&a, &b| {
            (resid - MIXTURE_TABLE[a].mean)
                .abs()
                .total_cmp(&(resid - MIXTURE_TABLE[b].mean).abs())
        })
        .unwrap_or(0)
}

fn draw_categorical<R: Rng + ?Sized>(p: &[f64; NUM_COMPONENTS], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, pj) in p.iter().enumerate() {
        acc += pj;
        if u < acc {
            return j;
        }
    }
    // rounding left u above the final cumulative sum
    p.iter().rposition(|&pj| pj > 0.0).unwrap_or(NUM_COMPONENTS - 1)
}

/// Step 1: mixture indicators, independently per `(site, period)`.
pub fn sample_z<R: Rng + ?Sized>(ystar: &DMatrix<f64>, h: &DMatrix<f64>, rng: &mut R) -> MixtureState {
    let (n, t_len) = ystar.shape();
    let mut underflows = 0usize;
    let z = ystar
        .iter()
        .zip(h.iter())
        .map(|(ys, hv)| {
            let resid = ys - hv;
            if !resid.is_finite() {
                underflows += 1;
            }
            draw_categorical(&z_probabilities(resid), rng) as u8
        })
        .collect();
    if underflows > 0 {
        log::warn!("{underflows} indicator draws fell back to the nearest-mean component");
    }
    MixtureState { n, t_len, z }
}

/// Conditional posterior of `h`: the factor of its precision and its mean.
pub struct HPosterior {
    pub chol: BlockCholesky,
    pub mean: DVector<f64>,
}

pub fn h_posterior(
    ystar: &DMatrix<f64>,
    z: &MixtureState,
    mu: &DVector<f64>,
    precision: &PrecisionBlocks,
) -> Result<HPosterior> {
    let (n, t_len) = ystar.shape();
    let means = z.means();
    let vars = z.variances();
    let mut q = precision.to_block_tridiagonal();
    let inv_vars: Vec<f64> = vars.iter().map(|v| 1.0 / v).collect();
    q.add_diagonal(&inv_vars);

    let mu_panel = DMatrix::from_fn(n, t_len, |i, _| mu[i]);
    let prior_part = precision.mul_panel(&mu_panel);
    let rhs = DVector::from_iterator(
        n * t_len,
        prior_part
            .iter()
            .zip(ystar.iter().zip(means.iter()))
            .zip(inv_vars.iter())
            .map(|((p, (ys, d)), iv)| p + iv * (ys - d)),
    );
    let chol = q.cholesky().map_err(|e| {
        Error::Numerical(format!("posterior precision of h: {e}"))
    })?;
    let mean = chol.solve(&rhs);
    Ok(HPosterior { chol, mean })
}

/// Step 2: joint draw of all log-volatilities from their Gaussian
/// conditional, via the block-tridiagonal posterior precision.
pub fn sample_h<R: Rng + ?Sized>(
    ystar: &DMatrix<f64>,
    z: &MixtureState,
    mu: &DVector<f64>,
    system: &SpaceTimeSystem,
    sigma2: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (n, t_len) = ystar.shape();
    let precision = system.precision_blocks(sigma2, t_len)?;
    let post = h_posterior(ystar, z, mu, &precision)?;
    let mut noise = DVector::from_fn(n * t_len, |_, _| rng.sample::<f64, _>(StandardNormal));
    post.chol.solve_upper_mut(&mut noise);
    let draw = post.mean + noise;
    Ok(DMatrix::from_column_slice(n, t_len, draw.as_slice()))
}

/// Conditional posterior of `mu`: the Cholesky factor of its precision and
/// its mean.
pub struct MuPosterior {
    pub chol: Cholesky<f64, nalgebra::Dyn>,
    pub mean: DVector<f64>,
}

pub fn mu_posterior(h: &DMatrix<f64>, precision: &PrecisionBlocks, prior: &PriorSpec) -> Result<MuPosterior> {
    let prec = prior.mu_precision() + precision.block_sum();
    let rhs = prior.mu_precision() * &prior.mu_mean + precision.contract_panel(h);
    let chol = Cholesky::new(prec).ok_or_else(|| {
        Error::Numerical("posterior precision of mu is not positive definite".into())
    })?;
    let mean = chol.solve(&rhs);
    Ok(MuPosterior { chol, mean })
}

/// Step 3: site effects.
pub fn sample_mu<R: Rng + ?Sized>(
    h: &DMatrix<f64>,
    system: &SpaceTimeSystem,
    sigma2: f64,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let precision = system.precision_blocks(sigma2, h.ncols())?;
    let post = mu_posterior(h, &precision, prior)?;
    let mut z = DVector::from_fn(h.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    post.chol.l_dirty().tr_solve_lower_triangular_mut(&mut z);
    Ok(post.mean + z)
}

/// Inverse-gamma shape and scale of the conditional posterior of `sigma2`.
pub fn sigma2_posterior(
    h: &DMatrix<f64>,
    mu: &DVector<f64>,
    system: &SpaceTimeSystem,
    prior: &PriorSpec,
) -> Result<(f64, f64)> {
    let mut dev = h.clone();
    for mut col in dev.column_iter_mut() {
        col -= mu;
    }
    let q = system.quad_form(&dev);
    if !(q >= 0.0) {
        return Err(Error::Numerical(format!(
            "quadratic form for sigma2 is {q}"
        )));
    }
    let shape = prior.a + (h.len() as f64) / 2.0;
    let scale = prior.b + 0.5 * q;
    Ok((shape, scale))
}

/// Step 4: innovation variance from its inverse-gamma conditional.
pub fn sample_sigma2<R: Rng + ?Sized>(
    h: &DMatrix<f64>,
    mu: &DVector<f64>,
    system: &SpaceTimeSystem,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<f64> {
    let (shape, scale) = sigma2_posterior(h, mu, system, prior)?;
    draw_inverse_gamma(shape, scale, rng)
}

pub(crate) fn draw_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0)
        .map_err(|e| Error::Numerical(format!("inverse-gamma({shape}, {scale}): {e}")))?;
    Ok(scale / g.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::spacetime::SpilloverParams;
    use crate::weights::{Contiguity, WeightsMatrix};

    #[test]
    fn transform_examples() {
        let y = DMatrix::from_row_slice(1, 4, &[1.0, 0.0, -2.0, 2.0]);
        let ys = transform_outcome(&y, 1e-8);
        assert!(ys[(0, 0)].abs() < 1e-7);
        assert!((ys[(0, 1)] - 1e-8f64.ln()).abs() < 1e-12);
        assert!((ys[(0, 1)] + 18.420680743952367).abs() < 1e-9);
        assert_eq!(ys[(0, 2)], ys[(0, 3)]);
    }

    #[test]
    fn probabilities_normalize_and_peak() {
        for r in [-30.0, -5.0, 0.0, 1.92677, 4.0, 20.0] {
            let p = z_probabilities(r);
            let s: f64 = p.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // At the first component's mean, compare against direct evaluation.
        let r = 1.92677;
        let direct: Vec<f64> = MIXTURE_TABLE
            .iter()
            .map(|c| {
                c.prob / (2.0 * std::f64::consts::PI * c.var).sqrt()
                    * (-(r - c.mean).powi(2) / (2.0 * c.var)).exp()
            })
            .collect();
        let total: f64 = direct.iter().sum();
        let p = z_probabilities(r);
        for j in 0..NUM_COMPONENTS {
            assert!((p[j] - direct[j] / total).abs() < 1e-14);
        }
        // Among the three tightest components, the first (whose mean is the
        // residual) dominates its own density term.
        let own = |j: usize| direct[j] / MIXTURE_TABLE[j].prob;
        assert!(own(0) > own(1) && own(0) > own(2));
    }

    #[test]
    fn non_finite_residual_falls_back() {
        assert_eq!(z_probabilities(f64::INFINITY)[0], 1.0);
        assert_eq!(z_probabilities(f64::NEG_INFINITY)[9], 1.0);
    }

    #[test]
    fn h_draw_at_zero_rho_is_scalar_conjugate() {
        let w = WeightsMatrix::lattice(2, 2, Contiguity::Rook, None)
            .unwrap()
            .row_normalize();
        let sys = SpaceTimeSystem::new(SpilloverParams::zero(), &w, 15).unwrap();
        let sigma2 = 0.3;
        let ystar = DMatrix::from_fn(4, 3, |i, t| (i as f64) - 0.7 * t as f64);
        let z = MixtureState::new(4, 3, (0..12).map(|k| (k % 10) as u8).collect()).unwrap();
        let mu = DVector::from_vec(vec![0.2, -0.4, 1.0, 3.0]);
        let pb = sys.precision_blocks(sigma2, 3).unwrap();
        let post = h_posterior(&ystar, &z, &mu, &pb).unwrap();
        for t in 0..3 {
            for i in 0..4 {
                let c = MIXTURE_TABLE[z.get(i, t)];
                let prec = 1.0 / sigma2 + 1.0 / c.var;
                let m = (mu[i] / sigma2 + (ystar[(i, t)] - c.mean) / c.var) / prec;
                assert!((post.mean[t * 4 + i] - m).abs() < 1e-10);
            }
        }
        let mut rng = stream_rng(1, 0);
        let h = sample_h(&ystar, &z, &mu, &sys, sigma2, &mut rng).unwrap();
        assert_eq!(h.shape(), (4, 3));
    }

    #[test]
    fn mu_posterior_at_zero_rho_is_scalar_conjugate() {
        let w = WeightsMatrix::lattice(2, 2, Contiguity::Rook, None)
            .unwrap()
            .row_normalize();
        let sys = SpaceTimeSystem::new(SpilloverParams::zero(), &w, 15).unwrap();
        let (sigma2, tau2, t_len) = (0.25, 10.0, 5);
        let prior = PriorSpec::isotropic(4, 0.5, tau2, 3.0, 2.0).unwrap();
        let h = DMatrix::from_fn(4, t_len, |i, t| i as f64 + 0.1 * t as f64);
        let pb = sys.precision_blocks(sigma2, t_len).unwrap();
        let post = mu_posterior(&h, &pb, &prior).unwrap();
        let var = 1.0 / (1.0 / tau2 + t_len as f64 / sigma2);
        let cov = post.chol.inverse();
        for i in 0..4 {
            let hbar = h.row(i).mean();
            let m = var * (0.5 / tau2 + t_len as f64 * hbar / sigma2);
            assert!((post.mean[i] - m).abs() < 1e-10);
            assert!((cov[(i, i)] - var).abs() < 1e-10);
        }
    }

    #[test]
    fn sigma2_posterior_parameters() {
        let w = WeightsMatrix::lattice(1, 2, Contiguity::Rook, None).unwrap();
        let sys = SpaceTimeSystem::new(SpilloverParams::new(0.2, 0.1, 0.0), &w, 15).unwrap();
        let prior = PriorSpec::isotropic(2, 0.0, 10.0, 3.0, 2.0).unwrap();
        let mu = DVector::from_vec(vec![1.0, 2.0]);
        let h = DMatrix::from_fn(2, 3, |i, _| mu[i]);
        let (shape, scale) = sigma2_posterior(&h, &mu, &sys, &prior).unwrap();
        assert_eq!(shape, 6.0);
        assert_eq!(scale, 2.0);
    }
}
