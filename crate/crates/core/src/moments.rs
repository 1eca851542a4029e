//! Closed-form moments of the outcome.
//!
//! With `h ~ N(1_T (x) mu, Omega)` and `v_it` standard normal,
//! `E(y_it^r) = exp(mu_i r / 2 + r^2 Omega_{ii,tt} / 8) gamma(r)` for even
//! `r`, and the cross-covariance of `y^r` at two distinct points follows
//! from the bivariate lognormal moment generating function.
//!
//! Only a few entries of `Omega` are ever needed, so they are read off
//! columns obtained by solving the block-tridiagonal precision against unit
//! vectors.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::blocktri::BlockCholesky;
use crate::error::{Error, Result};
use crate::spacetime::{SpaceTimeSystem, SpilloverParams};
use crate::weights::WeightsMatrix;

/// Largest moment order accepted; `gamma(r)` and the exponent both grow
/// fast enough to overflow soon after.
pub const MAX_MOMENT_ORDER: u32 = 12;

fn check_order(r: u32) -> Result<()> {
    if r == 0 || r % 2 == 1 {
        return Err(Error::InvalidInput(format!(
            "moment order must be even and positive, got {r} (odd moments vanish by symmetry)"
        )));
    }
    if r > MAX_MOMENT_ORDER {
        return Err(Error::InvalidInput(format!(
            "moment order {r} exceeds the supported maximum {MAX_MOMENT_ORDER}"
        )));
    }
    Ok(())
}

/// `E(v^r) = r! / (2^{r/2} (r/2)!)` for a standard normal `v`, i.e. the
/// double factorial `(r-1)!!`.
pub fn gamma_factor(r: u32) -> Result<f64> {
    check_order(r)?;
    Ok(double_factorial(r))
}

// (r-1)!! without range checks; also used for the 2r-th moment on the
// diagonal of the covariance.
fn double_factorial(r: u32) -> f64 {
    (1..r).step_by(2).map(f64::from).product()
}

/// One moment query: order `r`, the point `(i, t)` and, for covariances,
/// the second point `(j, s)`. Indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MomentRequest {
    pub order: u32,
    pub site_i: usize,
    pub time_t: usize,
    pub site_j: usize,
    pub time_s: usize,
}

impl MomentRequest {
    pub fn new(order: u32, (site_i, time_t): (usize, usize), (site_j, time_s): (usize, usize)) -> Self {
        MomentRequest {
            order,
            site_i,
            time_t,
            site_j,
            time_s,
        }
    }

    /// Marginal request at a single point.
    pub fn at(order: u32, site: usize, time: usize) -> Self {
        Self::new(order, (site, time), (site, time))
    }
}

/// Model parameters fixed once, with the factored precision of `h`.
pub struct MomentModel {
    rho: SpilloverParams,
    mu: DVector<f64>,
    sigma2: f64,
    n: usize,
    t_len: usize,
    chol: BlockCholesky,
}

impl MomentModel {
    pub fn new(
        rho: SpilloverParams,
        mu: DVector<f64>,
        sigma2: f64,
        w: &WeightsMatrix,
        t_len: usize,
        k_truncation: usize,
    ) -> Result<Self> {
        let n = w.n();
        if mu.len() != n {
            return Err(Error::InvalidDimension(format!(
                "mu has {} entries but W is {n}x{n}",
                mu.len()
            )));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("mu must be finite".into()));
        }
        let system = SpaceTimeSystem::new(rho, w, k_truncation)?;
        let chol = system
            .precision_blocks(sigma2, t_len)?
            .to_block_tridiagonal()
            .cholesky()?;
        Ok(MomentModel {
            rho,
            mu,
            sigma2,
            n,
            t_len,
            chol,
        })
    }

    pub fn rho(&self) -> SpilloverParams {
        self.rho
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    fn index(&self, site: usize, time: usize) -> Result<usize> {
        if site >= self.n || time >= self.t_len {
            return Err(Error::InvalidInput(format!(
                "(site, time) = ({site}, {time}) outside the {}x{} panel",
                self.n, self.t_len
            )));
        }
        Ok(time * self.n + site)
    }

    /// Column `(j, s)` of `Omega`, stacked period by period.
    pub fn omega_column(&self, site: usize, time: usize) -> Result<DVector<f64>> {
        let k = self.index(site, time)?;
        let mut e = DVector::zeros(self.n * self.t_len);
        e[k] = 1.0;
        Ok(self.chol.solve(&e))
    }

    /// `Omega_{ij,ts} = Cov(h_it, h_js)`.
    pub fn omega(&self, (i, t): (usize, usize), (j, s): (usize, usize)) -> Result<f64> {
        let row = self.index(i, t)?;
        Ok(self.omega_column(j, s)?[row])
    }

    /// `E(y_it^r)`.
    pub fn moment(&self, r: u32, site: usize, time: usize) -> Result<f64> {
        check_order(r)?;
        let om = self.omega((site, time), (site, time))?;
        Ok(lognormal_moment(r, self.mu[site], om) * double_factorial(r))
    }

    /// `E(y^4) / E(y^2)^2 - 3 = 3 (exp(Omega_{ii,tt}) - 1)`.
    pub fn excess_kurtosis(&self, site: usize, time: usize) -> Result<f64> {
        let om = self.omega((site, time), (site, time))?;
        Ok(3.0 * om.exp_m1())
    }

    /// `Cov(y_it^r, y_js^r)`.
    ///
    /// At two distinct points the `v`s are independent and the covariance is
    /// `gamma(r)^2 exp(r (mu_i + mu_j)/2 + r^2 (Omega_ii,tt + Omega_jj,ss)/8)
    /// (exp(r^2 Omega_ij,ts / 4) - 1)`. At a single point it is the variance
    /// `gamma(2r) exp(r mu_i + r^2 Omega_ii,tt / 2) - E(y^r)^2`.
    pub fn cross_covariance(&self, req: &MomentRequest) -> Result<f64> {
        Ok(self.report(req)?.cross_covariance)
    }

    /// Everything a request touches, including the `Omega` entries used.
    pub fn report(&self, req: &MomentRequest) -> Result<MomentReport> {
        let r = req.order;
        check_order(r)?;
        let (i, t, j, s) = (req.site_i, req.time_t, req.site_j, req.time_s);
        let ki = self.index(i, t)?;
        let kj = self.index(j, s)?;
        let col_i = self.omega_column(i, t)?;
        let col_j = if ki == kj { col_i.clone() } else { self.omega_column(j, s)? };
        let omega_ii_tt = col_i[ki];
        let omega_jj_ss = col_j[kj];
        let omega_ij_ts = col_j[ki];
        let g = double_factorial(r);
        let rf = f64::from(r);
        let moment_i = g * lognormal_moment(r, self.mu[i], omega_ii_tt);
        let moment_j = g * lognormal_moment(r, self.mu[j], omega_jj_ss);
        let cross_covariance = if ki == kj {
            double_factorial(2 * r) * (rf * self.mu[i] + rf * rf * omega_ii_tt / 2.0).exp()
                - moment_i * moment_i
        } else {
            let base = rf * (self.mu[i] + self.mu[j]) / 2.0
                + rf * rf * (omega_ii_tt + omega_jj_ss) / 8.0;
            g * g * base.exp() * (rf * rf * omega_ij_ts / 4.0).exp_m1()
        };
        Ok(MomentReport {
            request: *req,
            gamma: g,
            omega_ii_tt,
            omega_jj_ss,
            omega_ij_ts,
            moment_i,
            moment_j,
            excess_kurtosis_i: 3.0 * omega_ii_tt.exp_m1(),
            cross_covariance,
        })
    }
}

// E exp(r h / 2) for h ~ N(mu, om).
fn lognormal_moment(r: u32, mu: f64, om: f64) -> f64 {
    let rf = f64::from(r);
    (mu * rf / 2.0 + rf * rf * om / 8.0).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub request: MomentRequest,
    pub gamma: f64,
    pub omega_ii_tt: f64,
    pub omega_jj_ss: f64,
    pub omega_ij_ts: f64,
    /// `E(y_it^r)`.
    pub moment_i: f64,
    /// `E(y_js^r)`.
    pub moment_j: f64,
    pub excess_kurtosis_i: f64,
    pub cross_covariance: f64,
}

/// `E(y_it^r)` at the request's first point.
pub fn unconditional_moment(model: &MomentModel, req: &MomentRequest) -> Result<f64> {
    model.moment(req.order, req.site_i, req.time_t)
}

pub fn cross_covariance(model: &MomentModel, req: &MomentRequest) -> Result<f64> {
    model.cross_covariance(req)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::Contiguity;

    fn w4() -> WeightsMatrix {
        WeightsMatrix::lattice(2, 2, Contiguity::Queen, None)
            .unwrap()
            .row_normalize()
    }

    fn model(rho: SpilloverParams, mu: f64) -> MomentModel {
        MomentModel::new(rho, DVector::from_element(4, mu), 0.25, &w4(), 3, 15).unwrap()
    }

    #[test]
    fn gamma_values() {
        assert_eq!(gamma_factor(2).unwrap(), 1.0);
        assert_eq!(gamma_factor(4).unwrap(), 3.0);
        // r! / (2^{r/2} (r/2)!) computed directly
        for r in (2..=12u32).step_by(2) {
            let fact = |k: u32| (1..=k).map(f64::from).product::<f64>();
            let direct = fact(r) / (2f64.powi(r as i32 / 2) * fact(r / 2));
            assert!((gamma_factor(r).unwrap() - direct).abs() < 1e-9 * direct);
        }
        assert_eq!(gamma_factor(8).unwrap(), 105.0);
    }

    #[test]
    fn bad_orders() {
        for r in [0, 1, 3, 7, 14] {
            assert!(matches!(gamma_factor(r), Err(Error::InvalidInput(_))));
        }
    }

    #[test]
    fn zero_rho_moments() {
        let m = model(SpilloverParams::zero(), 0.0);
        let e2 = m.moment(2, 1, 2).unwrap();
        assert!((e2 - 0.125f64.exp()).abs() < 1e-12);
        assert!((m.excess_kurtosis(0, 0).unwrap() - 3.0 * 0.25f64.exp_m1()).abs() < 1e-12);
        for (a, b) in [((0, 0), (1, 0)), ((0, 0), (0, 2)), ((2, 1), (3, 2))] {
            let req = MomentRequest::new(2, a, b);
            assert_eq!(m.cross_covariance(&req).unwrap(), 0.0);
        }
    }

    #[test]
    fn kurtosis_from_moments() {
        let m = model(SpilloverParams::new(0.3, 0.2, 0.1), 0.4);
        let e2 = m.moment(2, 2, 1).unwrap();
        let e4 = m.moment(4, 2, 1).unwrap();
        let k = m.excess_kurtosis(2, 1).unwrap();
        assert!((e4 / (e2 * e2) - 3.0 - k).abs() < 1e-10);
        assert!(k > 0.0);
    }

    #[test]
    fn mu_shift_scales_second_moment() {
        let rho = SpilloverParams::new(0.3, 0.2, 0.1);
        let a = model(rho, 0.0).moment(2, 0, 0).unwrap();
        let b = model(rho, 0.7).moment(2, 0, 0).unwrap();
        assert!((b / a - 0.7f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn covariance_sign_follows_omega() {
        let m = model(SpilloverParams::new(0.3, -0.4, 0.1), 0.0);
        let mut seen_neg = false;
        for t in 0..3 {
            for s in 0..3 {
                let rep = m.report(&MomentRequest::new(2, (0, t), (1, s))).unwrap();
                assert_eq!(rep.cross_covariance.signum(), rep.omega_ij_ts.signum());
                seen_neg |= rep.omega_ij_ts < 0.0;
            }
        }
        assert!(seen_neg);
    }

    #[test]
    fn diagonal_covariance_is_variance() {
        let m = model(SpilloverParams::new(0.3, 0.2, 0.1), 0.2);
        let req = MomentRequest::at(2, 1, 1);
        let e2 = m.moment(2, 1, 1).unwrap();
        let e4 = m.moment(4, 1, 1).unwrap();
        assert!((m.cross_covariance(&req).unwrap() - (e4 - e2 * e2)).abs() < 1e-12);
    }

    #[test]
    fn omega_matches_dense_inverse() {
        let rho = SpilloverParams::new(0.3, 0.2, 0.1);
        let m = model(rho, 0.0);
        let sys = SpaceTimeSystem::new(rho, &w4(), 15).unwrap();
        let dense = sys.precision_blocks(0.25, 3).unwrap().to_dense().try_inverse().unwrap();
        for (a, b) in [((0, 0), (0, 0)), ((1, 0), (3, 2)), ((2, 2), (0, 1))] {
            let want = dense[(a.1 * 4 + a.0, b.1 * 4 + b.0)];
            assert!((m.omega(a, b).unwrap() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_out_of_range_and_unstable() {
        let m = model(SpilloverParams::zero(), 0.0);
        assert!(m.moment(2, 4, 0).is_err());
        assert!(m.moment(2, 0, 3).is_err());
        let bad = MomentModel::new(
            SpilloverParams::new(0.5, 0.6, 0.2),
            DVector::zeros(4),
            0.25,
            &w4(),
            3,
            15,
        );
        assert!(matches!(bad, Err(Error::Unstable { .. })));
    }
}
