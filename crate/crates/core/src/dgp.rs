//! Simulation of panels from the model.
//!
//! The first period is drawn from the stationary distribution
//! `h_1 - mu = S^-1 (sigma2 K)^{1/2} z` (with `K` truncated), later periods
//! follow the reduced form `h_t - mu = S^-1 A (h_{t-1} - mu) + S^-1 U_t`, and
//! `y_it = exp(h_it / 2) v_it`.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, SvRng};
use crate::spacetime::{SpaceTimeSystem, SpilloverParams, DEFAULT_K_TRUNCATION};
use crate::stats;
use crate::weights::WeightsMatrix;

/// Site effects: given explicitly or drawn once per panel as i.i.d. normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuSpec {
    Explicit(Vec<f64>),
    Random { mean: f64, sd: f64 },
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub t_len: usize,
    pub rho: SpilloverParams,
    pub sigma2: f64,
    pub mu: MuSpec,
    pub weights: WeightsMatrix,
    pub seed: u64,
    pub k_truncation: usize,
}

impl SimulationConfig {
    pub fn new(weights: WeightsMatrix, t_len: usize, rho: SpilloverParams, sigma2: f64, mu: MuSpec) -> Self {
        SimulationConfig {
            t_len,
            rho,
            sigma2,
            mu,
            weights,
            seed: 0,
            k_truncation: DEFAULT_K_TRUNCATION,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn n(&self) -> usize {
        self.weights.n()
    }

    fn validate(&self) -> Result<()> {
        if self.t_len == 0 {
            return Err(Error::InvalidDimension("T must be at least 1".into()));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        if self.k_truncation == 0 {
            return Err(Error::InvalidInput("k_truncation must be positive".into()));
        }
        match &self.mu {
            MuSpec::Explicit(mu) if mu.len() != self.n() => Err(Error::InvalidDimension(format!(
                "mu has {} entries but W has {} sites",
                mu.len(),
                self.n()
            ))),
            MuSpec::Explicit(mu) if mu.iter().any(|m| !m.is_finite()) => {
                Err(Error::InvalidInput("mu entries must be finite".into()))
            }
            MuSpec::Random { sd, .. } if !(*sd >= 0.0) => {
                Err(Error::InvalidInput("mu sd must be nonnegative".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Outcomes and true log-volatilities, both `n x T` (column = period).
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel {
    pub y: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub rho: SpilloverParams,
    pub sigma2: f64,
    pub seed: u64,
}

/// Reusable draw machinery for one configuration; `mu` is fixed at
/// construction.
pub struct Simulator {
    n: usize,
    t_len: usize,
    sigma: f64,
    mu: DVector<f64>,
    system: SpaceTimeSystem,
    s_lu: LU<f64, Dyn, Dyn>,
    /// `(sigma2 K)^{1/2}` lower Cholesky factor.
    init_factor: DMatrix<f64>,
    rng: SvRng,
    config: SimulationConfig,
}

impl Simulator {
    pub fn new(config: &SimulationConfig) -> Result<Self> {
        Self::with_stream(config, 0)
    }

    /// Uses random stream `stream` of the configured seed.
    pub fn with_stream(config: &SimulationConfig, stream: u64) -> Result<Self> {
        config.validate()?;
        let system = SpaceTimeSystem::new(config.rho, &config.weights, config.k_truncation)?;
        let n = config.n();
        let mut rng = stream_rng(config.seed, stream);
        let mu = match &config.mu {
            MuSpec::Explicit(v) => DVector::from_column_slice(v),
            MuSpec::Random { mean, sd } => {
                let dist = Normal::new(*mean, *sd)
                    .map_err(|e| Error::InvalidInput(format!("site-effect distribution: {e}")))?;
                DVector::from_fn(n, |_, _| dist.sample(&mut rng))
            }
        };
        let s_lu = system.s_dense().clone().lu();
        let init_factor = system.k_cholesky().l() * config.sigma2.sqrt();
        Ok(Simulator {
            n,
            t_len: config.t_len,
            sigma: config.sigma2.sqrt(),
            mu,
            system,
            s_lu,
            init_factor,
            rng,
            config: config.clone(),
        })
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    fn normal_vec(rng: &mut SvRng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    /// Draws the centred log-volatility panel `h - mu`.
    pub fn draw_h_dev(&mut self) -> DMatrix<f64> {
        let (n, t_len) = (self.n, self.t_len);
        let mut dev = DMatrix::zeros(n, t_len);
        let z = Self::normal_vec(&mut self.rng, n);
        let mut x = &self.init_factor * z;
        self.s_lu.solve_mut(&mut x);
        dev.set_column(0, &x);
        let mut buf = vec![0.0; n];
        for t in 1..t_len {
            self.system
                .a()
                .mul_slice(dev.column(t - 1).as_slice(), &mut buf);
            let mut rhs = DVector::from_fn(n, |i, _| {
                buf[i] + self.sigma * self.rng.sample::<f64, _>(StandardNormal)
            });
            self.s_lu.solve_mut(&mut rhs);
            dev.set_column(t, &rhs);
        }
        dev
    }

    pub fn draw(&mut self) -> SimulatedPanel {
        let mut h = self.draw_h_dev();
        for mut col in h.column_iter_mut() {
            col += &self.mu;
        }
        let y = h.map(|hit| (0.5 * hit).exp() * self.rng.sample::<f64, _>(StandardNormal));
        SimulatedPanel {
            y,
            h,
            mu: self.mu.clone(),
            rho: self.config.rho,
            sigma2: self.config.sigma2,
            seed: self.config.seed,
        }
    }

    /// Draws only `y_{site,time}`, for Monte Carlo over many replications.
    pub fn draw_y_at(&mut self, site: usize, time: usize) -> f64 {
        let dev = self.draw_h_dev();
        let h = dev[(site, time)] + self.mu[site];
        (0.5 * h).exp() * self.rng.sample::<f64, _>(StandardNormal)
    }
}

/// Simulates one panel; refuses unstable spillovers.
pub fn simulate(config: &SimulationConfig) -> Result<SimulatedPanel> {
    Ok(Simulator::new(config)?.draw())
}

/// Monte Carlo excess kurtosis of `y_{site,time}` over independent panel
/// replications (site effects held fixed).
pub fn sample_excess_kurtosis(
    config: &SimulationConfig,
    site: usize,
    time: usize,
    draws: usize,
) -> Result<f64> {
    if site >= config.n() || time >= config.t_len {
        return Err(Error::InvalidInput(format!(
            "(site, time) = ({site}, {time}) outside {}x{} panel",
            config.n(),
            config.t_len
        )));
    }
    if draws < 2 {
        return Err(Error::InvalidInput("need at least 2 draws".into()));
    }
    if draws < 10_000 {
        log::warn!("excess kurtosis from only {draws} draws has high variance");
    }
    let mut sim = Simulator::new(config)?;
    let ys: Vec<f64> = (0..draws).map(|_| sim.draw_y_at(site, time)).collect();
    Ok(stats::excess_kurtosis(&ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spacetime::check_stability;
    use crate::weights::Contiguity;

    fn queen(k: usize, m: usize) -> WeightsMatrix {
        WeightsMatrix::lattice(k, m, Contiguity::Queen, None)
            .unwrap()
            .row_normalize()
    }

    #[test]
    fn zero_rho_variance_matches_sigma2() {
        let cfg = SimulationConfig::new(
            queen(2, 2),
            5,
            SpilloverParams::zero(),
            0.25,
            MuSpec::Explicit(vec![1.0; 4]),
        )
        .with_seed(3);
        let mut sim = Simulator::new(&cfg).unwrap();
        let mut hs = Vec::with_capacity(100_000);
        while hs.len() < 100_000 {
            let dev = sim.draw_h_dev();
            hs.extend(dev.iter().copied());
        }
        let v = stats::variance(&hs[..100_000]);
        assert!((v / 0.25 - 1.0).abs() < 0.03, "variance {v}");
    }

    #[test]
    fn same_seed_same_panel() {
        let cfg = SimulationConfig::new(
            queen(3, 3),
            10,
            SpilloverParams::new(0.3, 0.4, 0.1),
            0.25,
            MuSpec::Random { mean: 3.3, sd: 0.35 },
        )
        .with_seed(99);
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate(&cfg.clone().with_seed(100)).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn reference_configuration_runs() {
        let w = queen(7, 14);
        let rho = SpilloverParams::new(0.6, 0.35, -0.025);
        assert!(check_stability(&rho, &w).unwrap().stable);
        let cfg = SimulationConfig::new(w, 50, rho, 0.25, MuSpec::Random { mean: 3.3, sd: 0.35 })
            .with_seed(1);
        let p = simulate(&cfg).unwrap();
        assert_eq!(p.y.shape(), (98, 50));
        assert!(p.y.iter().all(|v| v.is_finite()));
        let mu_mean = p.mu.mean();
        assert!((mu_mean - 3.3).abs() < 0.15);
    }

    #[test]
    fn unstable_rho_is_refused() {
        let cfg = SimulationConfig::new(
            queen(3, 3),
            10,
            SpilloverParams::new(0.99, 0.99, 0.0),
            0.25,
            MuSpec::Explicit(vec![0.0; 9]),
        );
        assert!(matches!(simulate(&cfg), Err(Error::Unstable { .. })));
    }

    #[test]
    fn kurtosis_examples() {
        let w = queen(2, 2);
        let cfg = SimulationConfig::new(
            w.clone(),
            2,
            SpilloverParams::zero(),
            0.25,
            MuSpec::Explicit(vec![0.0; 4]),
        )
        .with_seed(5);
        let k = sample_excess_kurtosis(&cfg, 1, 1, 400_000).unwrap();
        let expected = 3.0 * (0.25f64.exp() - 1.0);
        assert!((k - expected).abs() < 0.1, "kurtosis {k} vs {expected}");

        let tiny = SimulationConfig { sigma2: 1e-8, ..cfg.clone() };
        let k0 = sample_excess_kurtosis(&tiny, 0, 0, 200_000).unwrap();
        assert!(k0.abs() < 0.06, "gaussian limit {k0}");

        let spill = SimulationConfig {
            rho: SpilloverParams::new(0.6, 0.35, -0.025),
            ..cfg
        };
        assert!(sample_excess_kurtosis(&spill, 2, 1, 200_000).unwrap() > 0.0);
    }

    #[test]
    fn explicit_mu_must_match_sites() {
        let cfg = SimulationConfig::new(
            queen(2, 2),
            3,
            SpilloverParams::zero(),
            0.25,
            MuSpec::Explicit(vec![0.0; 3]),
        );
        assert!(matches!(simulate(&cfg), Err(Error::InvalidDimension(_))));
    }
}
