//! Five-step Gibbs sampler with adaptive Metropolis for the spillovers.
//!
//! Each sweep draws, in order, the mixture indicators `Z`, the
//! log-volatilities `h`, the site effects `mu`, the innovation variance
//! `sigma2` and finally `rho` by an adaptive Metropolis step.

pub mod am;
pub mod draws;
pub mod steps;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use am::{am_accept, AmConfig, AmState, CovWindow};
pub use draws::{
    pooled_h_median, quantile_bands, ParamSummary, PosteriorDraws, PosteriorSummary, QuantileBand,
};
pub use steps::{
    h_posterior, mu_posterior, sample_h, sample_mu, sample_sigma2, sample_z, sigma2_posterior,
    transform_outcome, HPosterior, MixtureState, MuPosterior,
    DEFAULT_ZERO_OFFSET,
};

use crate::error::{Error, Result};
use crate::mixture::mixture_mean;
use crate::rng::{stream_rng, SvRng};
use crate::spacetime::{SpaceTimeSystem, SpilloverParams, DEFAULT_K_TRUNCATION};
use crate::weights::WeightsMatrix;

/// Priors: `mu ~ N(b_mu, B_mu)`, `sigma2 ~ IG(a, b)` and `rho` uniform on
/// the stationary part of `(-1, 1)^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub mu_mean: DVector<f64>,
    mu_cov: DMatrix<f64>,
    mu_prec: DMatrix<f64>,
    pub a: f64,
    pub b: f64,
}

impl PriorSpec {
    /// General prior with an SPD covariance for `mu`.
    pub fn new(mu_mean: DVector<f64>, mu_cov: DMatrix<f64>, a: f64, b: f64) -> Result<Self> {
        let n = mu_mean.len();
        if mu_cov.shape() != (n, n) {
            return Err(Error::InvalidDimension(format!(
                "B_mu is {}x{} but b_mu has {n} entries",
                mu_cov.nrows(),
                mu_cov.ncols()
            )));
        }
        if mu_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("b_mu entries must be finite".into()));
        }
        let asym = (&mu_cov - mu_cov.transpose()).amax();
        if asym > 1e-12 * mu_cov.amax().max(1.0) {
            return Err(Error::InvalidInput("B_mu must be symmetric".into()));
        }
        let chol = mu_cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("B_mu must be positive definite".into()))?;
        if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "inverse-gamma prior needs a, b > 0, got a = {a}, b = {b}"
            )));
        }
        let mu_prec = chol.inverse();
        Ok(PriorSpec {
            mu_mean,
            mu_cov,
            mu_prec,
            a,
            b,
        })
    }

    /// `mu ~ N(mean 1, tau2 I)`.
    pub fn isotropic(n: usize, mean: f64, tau2: f64, a: f64, b: f64) -> Result<Self> {
        if !(tau2 > 0.0 && tau2.is_finite()) {
            return Err(Error::InvalidInput(format!("prior variance of mu must be positive, got {tau2}")));
        }
        Self::new(
            DVector::from_element(n, mean),
            DMatrix::identity(n, n) * tau2,
            a,
            b,
        )
    }

    /// The simulation-study prior: `mu ~ N(0, 10 I)`, `sigma2 ~ IG(3, 2)`.
    pub fn default_for(n: usize) -> Self {
        Self::isotropic(n, 0.0, 10.0, 3.0, 2.0).expect("constant prior is valid")
    }

    pub fn n(&self) -> usize {
        self.mu_mean.len()
    }

    pub fn mu_covariance(&self) -> &DMatrix<f64> {
        &self.mu_cov
    }

    pub fn mu_precision(&self) -> &DMatrix<f64> {
        &self.mu_prec
    }

    /// Starting value for `sigma2`: the prior mean, or the mode when the
    /// mean does not exist.
    pub fn sigma2_start(&self) -> f64 {
        if self.a > 1.0 {
            self.b / (self.a - 1.0)
        } else {
            self.b / (self.a + 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsConfig {
    pub chain_length: usize,
    pub burn_in: usize,
    /// Keep every `thinning`-th post-burn-in draw in summaries.
    pub thinning: usize,
    /// Store every `h_thinning`-th post-burn-in `h` draw.
    pub h_thinning: usize,
    pub seed: u64,
    pub k_truncation: usize,
    pub zero_offset: f64,
    #[serde(flatten)]
    pub am: AmConfig,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            chain_length: 22_000,
            burn_in: 2_000,
            thinning: 1,
            h_thinning: 10,
            seed: 0,
            k_truncation: DEFAULT_K_TRUNCATION,
            zero_offset: DEFAULT_ZERO_OFFSET,
            am: AmConfig::default(),
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chain_length == 0 {
            return Err(Error::Config("chain_length must be positive".into()));
        }
        if self.burn_in >= self.chain_length {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than chain_length ({})",
                self.burn_in, self.chain_length
            )));
        }
        if self.thinning == 0 || self.h_thinning == 0 {
            return Err(Error::Config("thinning intervals must be positive".into()));
        }
        if self.k_truncation == 0 {
            return Err(Error::Config("k_truncation must be positive".into()));
        }
        if !(self.zero_offset > 0.0 && self.zero_offset.is_finite()) {
            return Err(Error::Config("zero_offset must be positive".into()));
        }
        self.am.validate()
    }
}

/// Current values of all unknowns.
#[derive(Debug, Clone)]
pub struct GibbsState {
    pub z: Option<MixtureState>,
    pub h: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub sigma2: f64,
    pub rho: SpilloverParams,
}

/// One chain: transformed data, current state, AM history and RNG.
pub struct GibbsSampler<'w> {
    ystar: DMatrix<f64>,
    w: &'w WeightsMatrix,
    prior: PriorSpec,
    config: GibbsConfig,
    state: GibbsState,
    system: SpaceTimeSystem,
    am: AmState,
    rng: SvRng,
    iteration: usize,
}

impl<'w> GibbsSampler<'w> {
    /// Starts from raw outcomes `y` (`n x T`).
    pub fn new(
        y: &DMatrix<f64>,
        w: &'w WeightsMatrix,
        prior: PriorSpec,
        config: GibbsConfig,
        stream: u64,
    ) -> Result<Self> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("outcome panel contains non-finite values".into()));
        }
        config.validate()?;
        let ystar = transform_outcome(y, config.zero_offset);
        Self::from_transformed(ystar, w, prior, config, stream)
    }

    /// Starts from already transformed data `y* = log(y^2 + offset)`.
    pub fn from_transformed(
        ystar: DMatrix<f64>,
        w: &'w WeightsMatrix,
        prior: PriorSpec,
        config: GibbsConfig,
        stream: u64,
    ) -> Result<Self> {
        config.validate()?;
        let (n, t_len) = ystar.shape();
        if n != w.n() {
            return Err(Error::InvalidDimension(format!(
                "panel has {n} sites but W has {}",
                w.n()
            )));
        }
        if t_len == 0 {
            return Err(Error::InvalidDimension("panel has no periods".into()));
        }
        if prior.n() != n {
            return Err(Error::InvalidDimension(format!(
                "prior for mu has {} entries but the panel has {n} sites",
                prior.n()
            )));
        }
        if ystar.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("transformed panel contains non-finite values".into()));
        }
        let rho = SpilloverParams::zero();
        let system = SpaceTimeSystem::new(rho, w, config.k_truncation)?;
        let shift = mixture_mean();
        let mu = DVector::from_fn(n, |i, _| ystar.row(i).mean() - shift);
        let h = DMatrix::from_fn(n, t_len, |i, _| mu[i]);
        let state = GibbsState {
            z: None,
            h,
            mu,
            sigma2: prior.sigma2_start(),
            rho,
        };
        let am = AmState::new(config.am.clone(), rho);
        let rng = stream_rng(config.seed, stream);
        Ok(GibbsSampler {
            ystar,
            w,
            prior,
            config,
            state,
            system,
            am,
            rng,
            iteration: 0,
        })
    }

    pub fn state(&self) -> &GibbsState {
        &self.state
    }

    pub fn am_state(&self) -> &AmState {
        &self.am
    }

    pub fn config(&self) -> &GibbsConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn ystar(&self) -> &DMatrix<f64> {
        &self.ystar
    }

    pub fn rng_mut(&mut self) -> &mut SvRng {
        &mut self.rng
    }

    /// Overrides the current values of the unknowns. The spillover history
    /// of the adaptive proposal restarts at `state.rho`.
    pub fn set_state(&mut self, state: GibbsState) -> Result<()> {
        let (n, t_len) = self.ystar.shape();
        if state.h.shape() != (n, t_len) || state.mu.len() != n {
            return Err(Error::InvalidDimension("state does not match the panel".into()));
        }
        if !(state.sigma2 > 0.0) {
            return Err(Error::InvalidInput("sigma2 must be positive".into()));
        }
        self.system = SpaceTimeSystem::new(state.rho, self.w, self.config.k_truncation)?;
        self.am = AmState::new(self.config.am.clone(), state.rho);
        self.state = state;
        self.iteration = 0;
        Ok(())
    }

    /// Replaces the transformed data, keeping the current state.
    pub fn set_ystar(&mut self, ystar: DMatrix<f64>) -> Result<()> {
        if ystar.shape() != self.ystar.shape() {
            return Err(Error::InvalidDimension("replacement data has a different shape".into()));
        }
        self.ystar = ystar;
        Ok(())
    }

    /// Runs steps 1-5 once. Returns whether the spillover candidate was
    /// accepted.
    pub fn sweep(&mut self) -> Result<bool> {
        let g = self.iteration + 1;
        let tune = g <= self.config.burn_in;
        let st = &mut self.state;

        let z = sample_z(&self.ystar, &st.h, &mut self.rng);
        st.h = sample_h(&self.ystar, &z, &st.mu, &self.system, st.sigma2, &mut self.rng)
            .map_err(|e| Error::Numerical(format!("iteration {g}, h step: {e}")))?;
        st.z = Some(z);
        st.mu = sample_mu(&st.h, &self.system, st.sigma2, &self.prior, &mut self.rng)
            .map_err(|e| Error::Numerical(format!("iteration {g}, mu step: {e}")))?;
        st.sigma2 = sample_sigma2(&st.h, &st.mu, &self.system, &self.prior, &mut self.rng)
            .map_err(|e| Error::Numerical(format!("iteration {g}, sigma2 step: {e}")))?;

        let candidate = self.am.propose(&st.rho, self.w, &mut self.rng)?;
        let cand_system = SpaceTimeSystem::new(candidate, self.w, self.config.k_truncation)?;
        let lc = self.system.log_density(&st.h, &st.mu, st.sigma2);
        let ln = cand_system.log_density(&st.h, &st.mu, st.sigma2);
        if !lc.is_finite() || ln.is_nan() {
            return Err(Error::Numerical(format!(
                "iteration {g}: log-density of h is {lc} at rho = {:?} and {ln} at candidate {:?}; \
                 sigma2 = {}, mu range [{}, {}], h range [{}, {}]",
                st.rho.to_array(),
                candidate.to_array(),
                st.sigma2,
                st.mu.min(),
                st.mu.max(),
                st.h.min(),
                st.h.max()
            )));
        }
        let p = am::acceptance_probability(ln, lc);
        let accepted = self.rng.random::<f64>() < p;
        if accepted {
            st.rho = candidate;
            self.system = cand_system;
        }
        self.am.record(&st.rho, accepted, tune);
        self.iteration = g;
        Ok(accepted)
    }

    /// Runs the configured chain and collects the draws.
    pub fn run(mut self) -> Result<PosteriorDraws> {
        let (n, t_len) = self.ystar.shape();
        let mut out = PosteriorDraws::with_capacity(n, t_len, &self.config);
        for _ in 0..self.config.chain_length {
            let accepted = self.sweep()?;
            let g = self.iteration;
            let st = &self.state;
            let keep_h = g > self.config.burn_in
                && (g - self.config.burn_in) % self.config.h_thinning == 0;
            out.push(
                st.rho,
                st.sigma2,
                st.mu.clone(),
                keep_h.then(|| st.h.clone()),
                accepted,
            );
            if g % 1000 == 0 {
                log::debug!(
                    "iteration {g}: rho = {:?}, sigma2 = {:.4}, c = {:.4}",
                    st.rho.to_array(),
                    st.sigma2,
                    self.am.c()
                );
            }
        }
        out.set_c_trajectory(self.am.c_trajectory().to_vec());
        Ok(out)
    }
}

/// Runs one chain on the raw outcome panel.
pub fn run_gibbs(
    y: &DMatrix<f64>,
    w: &WeightsMatrix,
    prior: &PriorSpec,
    config: &GibbsConfig,
) -> Result<PosteriorDraws> {
    GibbsSampler::new(y, w, prior.clone(), config.clone(), 0)?.run()
}

/// Runs `chains` independent chains in parallel; chain `k` uses random
/// stream `k` of the configured seed.
pub fn run_chains(
    y: &DMatrix<f64>,
    w: &WeightsMatrix,
    prior: &PriorSpec,
    config: &GibbsConfig,
    chains: usize,
) -> Result<Vec<PosteriorDraws>> {
    if chains == 0 {
        return Err(Error::Config("need at least one chain".into()));
    }
    // fail fast on bad input before spawning
    let _ = GibbsSampler::new(y, w, prior.clone(), config.clone(), 0)?;
    let results: Vec<Result<PosteriorDraws>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..chains)
            .map(|k| {
                s.spawn(move || GibbsSampler::new(y, w, prior.clone(), config.clone(), k as u64)?.run())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Numerical("chain thread panicked".into())))
            })
            .collect()
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{simulate, MuSpec, SimulationConfig};
    use crate::spacetime::check_stability;
    use crate::weights::Contiguity;

    #[test]
    fn prior_validation() {
        assert!(PriorSpec::isotropic(3, 0.0, 10.0, 3.0, 2.0).is_ok());
        assert!(PriorSpec::isotropic(3, 0.0, 0.0, 3.0, 2.0).is_err());
        assert!(PriorSpec::isotropic(3, 0.0, 1.0, 0.0, 2.0).is_err());
        assert!(PriorSpec::isotropic(3, 0.0, 1.0, 3.0, -1.0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(PriorSpec::new(DVector::zeros(2), asym, 3.0, 2.0).is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(PriorSpec::new(DVector::zeros(2), indef, 3.0, 2.0).is_err());
        let p = PriorSpec::default_for(4);
        assert!((p.mu_precision()[(1, 1)] - 0.1).abs() < 1e-15);
        assert_eq!(p.sigma2_start(), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(GibbsConfig::default().validate().is_ok());
        let bad = GibbsConfig {
            burn_in: 22_000,
            ..GibbsConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = GibbsConfig {
            thinning: 0,
            ..GibbsConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn small_panel(seed: u64) -> (WeightsMatrix, DMatrix<f64>) {
        let w = WeightsMatrix::lattice(3, 3, Contiguity::Queen, None)
            .unwrap()
            .row_normalize();
        let cfg = SimulationConfig::new(
            w.clone(),
            20,
            SpilloverParams::new(0.3, 0.4, 0.0),
            0.25,
            MuSpec::Random { mean: 1.0, sd: 0.3 },
        )
        .with_seed(seed);
        (w, simulate(&cfg).unwrap().y)
    }

    #[test]
    fn short_chain_is_deterministic_and_stable() {
        let (w, y) = small_panel(11);
        let prior = PriorSpec::default_for(9);
        let config = GibbsConfig {
            chain_length: 300,
            burn_in: 100,
            seed: 42,
            am: AmConfig {
                g0: 50,
                ..AmConfig::default()
            },
            ..GibbsConfig::default()
        };
        let a = run_gibbs(&y, &w, &prior, &config).unwrap();
        let b = run_gibbs(&y, &w, &prior, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
        assert_eq!(a.h_draws().len(), 20);
        for r in a.rho() {
            assert!(check_stability(r, &w).unwrap().stable);
        }
        assert!(a.sigma2().iter().all(|&s| s > 0.0));
    }

    #[test]
    fn chains_use_distinct_streams() {
        let (w, y) = small_panel(12);
        let prior = PriorSpec::default_for(9);
        let config = GibbsConfig {
            chain_length: 60,
            burn_in: 10,
            seed: 1,
            ..GibbsConfig::default()
        };
        let chains = run_chains(&y, &w, &prior, &config, 2).unwrap();
        assert_eq!(chains.len(), 2);
        assert_ne!(chains[0].sigma2(), chains[1].sigma2());
        assert_eq!(chains[0], run_gibbs(&y, &w, &prior, &config).unwrap());
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let (w, y) = small_panel(13);
        let prior = PriorSpec::default_for(4);
        assert!(matches!(
            run_gibbs(&y, &w, &prior, &GibbsConfig::default()),
            Err(Error::InvalidDimension(_))
        ));
        let mut bad = y.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(run_gibbs(&bad, &w, &PriorSpec::default_for(9), &GibbsConfig::default()).is_err());
    }
}
