//! Adaptive Metropolis updates for the spillover vector.
//!
//! For the first `g0` iterations candidates come from
//! `N(rho, 0.1^2 / 3 I)`. Afterwards they come from the mixture
//! `0.95 N(rho, c 2.38^2 / 3 Cov) + 0.05 N(rho, 0.1^2 / 3 I)`, where `Cov`
//! is the empirical covariance of every draw so far (or, optionally, of the
//! most recent half of them). Candidates outside the stationary region (or
//! the unit box of the prior) are redrawn.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spacetime::{stability_from_spectrum, SpaceTimeSystem, SpilloverParams};
use crate::weights::WeightsMatrix;

/// Variance of each coordinate under the fixed random-walk proposal.
pub const FIXED_PROPOSAL_VAR: f64 = 0.01 / 3.0;
/// `2.38^2 / d` for `d = 3`.
pub const ADAPTIVE_SCALE: f64 = 2.38 * 2.38 / 3.0;
/// Weight of the adaptive component once adaptation starts.
pub const ADAPTIVE_WEIGHT: f64 = 0.95;

/// Which past draws enter the adaptive covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovWindow {
    /// `rho(0), ..., rho(g-1)`.
    #[default]
    Full,
    /// `rho(g/2), ..., rho(g-1)`; forgets the approach from the start value.
    RecentHalf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmConfig {
    /// Length of the initial fixed-proposal period.
    pub g0: usize,
    /// Starting value of the tuning scalar `c`. Well below one because
    /// the history covariance reflects the marginal posterior of `rho`,
    /// which is much wider than its conditional given `h`.
    pub c_init: f64,
    /// Burn-in iterations between adjustments of `c`.
    pub tune_interval: usize,
    /// Multiplicative step for `c`.
    pub tune_factor: f64,
    pub target_low: f64,
    pub target_high: f64,
    /// Consecutive unstable candidates tolerated before giving up.
    pub max_redraws: usize,
    /// Per-coordinate variance of the fixed proposal component.
    pub fixed_var: f64,
    pub window: CovWindow,
}

impl Default for AmConfig {
    fn default() -> Self {
        AmConfig {
            g0: 1000,
            c_init: 0.05,
            tune_interval: 200,
            tune_factor: 1.1,
            target_low: 0.40,
            target_high: 0.60,
            max_redraws: 10_000,
            fixed_var: FIXED_PROPOSAL_VAR,
            window: CovWindow::Full,
        }
    }
}

impl AmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_init > 0.0 && self.c_init.is_finite()) {
            return Err(Error::Config(format!("c_init must be positive, got {}", self.c_init)));
        }
        if self.tune_interval == 0 {
            return Err(Error::Config("tune_interval must be positive".into()));
        }
        if !(self.tune_factor >= 1.0) {
            return Err(Error::Config("tune_factor must be at least 1".into()));
        }
        if !(0.0 <= self.target_low && self.target_low < self.target_high && self.target_high <= 1.0) {
            return Err(Error::Config("acceptance target band must satisfy 0 <= low < high <= 1".into()));
        }
        if !(self.fixed_var > 0.0 && self.fixed_var.is_finite()) {
            return Err(Error::Config("fixed_var must be positive".into()));
        }
        if self.max_redraws == 0 {
            return Err(Error::Config("max_redraws must be positive".into()));
        }
        Ok(())
    }
}

/// Running history and tuning state of the sampler.
#[derive(Debug, Clone)]
pub struct AmState {
    config: AmConfig,
    /// Iteration about to propose; the history holds draws `0..g`.
    g: usize,
    c: f64,
    history: Vec<Vector3<f64>>,
    /// First draw inside the covariance window.
    start: usize,
    sum: Vector3<f64>,
    sum_sq: Matrix3<f64>,
    proposed: usize,
    accepted: usize,
    window_proposed: usize,
    window_accepted: usize,
    c_trajectory: Vec<(usize, f64)>,
}

fn vec3(rho: &SpilloverParams) -> Vector3<f64> {
    Vector3::new(rho.rho1, rho.rho2, rho.rho3)
}

impl AmState {
    pub fn new(config: AmConfig, initial: SpilloverParams) -> Self {
        let x = vec3(&initial);
        let c = config.c_init;
        AmState {
            config,
            g: 1,
            c,
            history: vec![x],
            start: 0,
            sum: x,
            sum_sq: x * x.transpose(),
            proposed: 0,
            accepted: 0,
            window_proposed: 0,
            window_accepted: 0,
            c_trajectory: vec![(0, c)],
        }
    }

    pub fn config(&self) -> &AmConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.g
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `(iteration, c)` after each change, starting with the initial value.
    pub fn c_trajectory(&self) -> &[(usize, f64)] {
        &self.c_trajectory
    }

    pub fn is_adaptive(&self) -> bool {
        self.g > self.config.g0
    }

    /// Number of draws inside the covariance window.
    pub fn window_len(&self) -> usize {
        self.g - self.start
    }

    pub fn mean(&self) -> Vector3<f64> {
        self.sum / self.window_len() as f64
    }

    /// `(1/m) sum rho rho' - rho_bar rho_bar'` over the `m` draws in the
    /// window.
    pub fn covariance(&self) -> Matrix3<f64> {
        let m = self.mean();
        let cov = self.sum_sq / self.window_len() as f64 - m * m.transpose();
        (cov + cov.transpose()) * 0.5
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn counts(&self) -> (usize, usize) {
        (self.accepted, self.proposed)
    }

    /// Covariance of the adaptive component, `c 2.38^2 / 3 Cov`.
    pub fn adaptive_covariance(&self) -> Matrix3<f64> {
        self.covariance() * (self.c * ADAPTIVE_SCALE)
    }

    fn draw_from<R: Rng + ?Sized>(
        center: &Vector3<f64>,
        cov: &Matrix3<f64>,
        rng: &mut R,
    ) -> Vector3<f64> {
        let eig = SymmetricEigen::new(*cov);
        let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let scaled = Vector3::from_fn(|i, _| eig.eigenvalues[i].max(0.0).sqrt() * z[i]);
        center + eig.eigenvectors * scaled
    }

    /// Draws a candidate, redrawing until it is stationary for `w` and
    /// inside the unit box.
    pub fn propose<R: Rng + ?Sized>(
        &self,
        current: &SpilloverParams,
        w: &WeightsMatrix,
        rng: &mut R,
    ) -> Result<SpilloverParams> {
        let spectrum = w.spectrum()?;
        let center = vec3(current);
        let fixed = Matrix3::identity() * self.config.fixed_var;
        let adaptive = self.is_adaptive().then(|| self.adaptive_covariance());
        for _ in 0..self.config.max_redraws {
            let cov = match &adaptive {
                Some(a) if rng.random::<f64>() < ADAPTIVE_WEIGHT => a,
                _ => &fixed,
            };
            let x = Self::draw_from(&center, cov, rng);
            let cand = SpilloverParams::new(x[0], x[1], x[2]);
            if cand.in_unit_box() && stability_from_spectrum(&cand, spectrum).stable {
                return Ok(cand);
            }
        }
        Err(Error::Numerical(format!(
            "{} consecutive spillover candidates around {:?} were non-stationary \
             (iteration {}, c = {}, Cov = {:?})",
            self.config.max_redraws,
            current.to_array(),
            self.g,
            self.c,
            self.covariance().as_slice()
        )))
    }

    /// Appends the draw of the current iteration and advances. During
    /// burn-in (`tune`) with adaptation active, `c` is nudged every
    /// `tune_interval` proposals toward the target acceptance band.
    pub fn record(&mut self, rho: &SpilloverParams, accepted: bool, tune: bool) {
        let x = vec3(rho);
        self.history.push(x);
        self.sum += x;
        self.sum_sq += x * x.transpose();
        self.proposed += 1;
        self.accepted += accepted as usize;

        if tune && self.is_adaptive() {
            self.window_proposed += 1;
            self.window_accepted += accepted as usize;
            if self.window_proposed == self.config.tune_interval {
                let rate = self.window_accepted as f64 / self.window_proposed as f64;
                let before = self.c;
                if rate < self.config.target_low {
                    self.c /= self.config.tune_factor;
                } else if rate > self.config.target_high {
                    self.c *= self.config.tune_factor;
                }
                if self.c != before {
                    self.c_trajectory.push((self.g, self.c));
                }
                self.window_proposed = 0;
                self.window_accepted = 0;
            }
        }
        self.g += 1;
        if self.config.window == CovWindow::RecentHalf {
            while self.start < self.g / 2 {
                let old = self.history[self.start];
                self.sum -= old;
                self.sum_sq -= old * old.transpose();
                self.start += 1;
            }
        }
    }

    /// Restarts acceptance counting, e.g. at the end of burn-in.
    pub fn reset_counts(&mut self) {
        self.proposed = 0;
        self.accepted = 0;
    }
}

/// Metropolis acceptance probability for moving from the current to the
/// candidate spillovers, given both log-densities of `h`.
pub fn acceptance_probability(log_candidate: f64, log_current: f64) -> f64 {
    let r = log_candidate - log_current;
    if r >= 0.0 {
        1.0
    } else {
        r.exp()
    }
}

/// Accept/reject step on fresh systems. Returns the kept value and whether
/// the candidate was accepted.
#[allow(clippy::too_many_arguments)]
pub fn am_accept<R: Rng + ?Sized>(
    candidate: &SpilloverParams,
    current: &SpilloverParams,
    h: &DMatrix<f64>,
    mu: &DVector<f64>,
    sigma2: f64,
    w: &WeightsMatrix,
    k_truncation: usize,
    rng: &mut R,
) -> Result<(SpilloverParams, bool)> {
    let cur = SpaceTimeSystem::new(*current, w, k_truncation)?;
    let cand = SpaceTimeSystem::new(*candidate, w, k_truncation)?;
    let lc = cur.log_density(h, mu, sigma2);
    let ln = cand.log_density(h, mu, sigma2);
    let p = acceptance_probability(ln, lc);
    if rng.random::<f64>() < p {
        Ok((*candidate, true))
    } else {
        Ok((*current, false))
    }
}
