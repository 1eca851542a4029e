//! Stored chain output and posterior summaries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::GibbsConfig;
use crate::error::{Error, Result};
use crate::spacetime::SpilloverParams;
use crate::stats;

/// Draws of one chain. `rho`, `sigma2` and `mu` hold every iteration
/// (burn-in included); `h` holds every `h_thinning`-th post-burn-in draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    n: usize,
    t_len: usize,
    burn_in: usize,
    thinning: usize,
    h_thinning: usize,
    rho: Vec<SpilloverParams>,
    sigma2: Vec<f64>,
    mu: Vec<DVector<f64>>,
    /// `(iteration, h)` with 1-based iterations.
    h: Vec<(usize, DMatrix<f64>)>,
    accepted: Vec<bool>,
    c_trajectory: Vec<(usize, f64)>,
}

impl PosteriorDraws {
    pub(crate) fn with_capacity(n: usize, t_len: usize, config: &GibbsConfig) -> Self {
        let len = config.chain_length;
        PosteriorDraws {
            n,
            t_len,
            burn_in: config.burn_in,
            thinning: config.thinning,
            h_thinning: config.h_thinning,
            rho: Vec::with_capacity(len),
            sigma2: Vec::with_capacity(len),
            mu: Vec::with_capacity(len),
            h: Vec::new(),
            accepted: Vec::with_capacity(len),
            c_trajectory: Vec::new(),
        }
    }

    pub(crate) fn push(
        &mut self,
        rho: SpilloverParams,
        sigma2: f64,
        mu: DVector<f64>,
        h: Option<DMatrix<f64>>,
        accepted: bool,
    ) {
        self.rho.push(rho);
        self.sigma2.push(sigma2);
        self.mu.push(mu);
        self.accepted.push(accepted);
        if let Some(h) = h {
            self.h.push((self.rho.len(), h));
        }
    }

    pub(crate) fn set_c_trajectory(&mut self, c: Vec<(usize, f64)>) {
        self.c_trajectory = c;
    }

    /// Number of iterations recorded.
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn thinning(&self) -> usize {
        self.thinning
    }

    pub fn h_thinning(&self) -> usize {
        self.h_thinning
    }

    pub fn rho(&self) -> &[SpilloverParams] {
        &self.rho
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn mu(&self) -> &[DVector<f64>] {
        &self.mu
    }

    pub fn h_draws(&self) -> &[(usize, DMatrix<f64>)] {
        &self.h
    }

    pub fn accepted(&self) -> &[bool] {
        &self.accepted
    }

    pub fn c_trajectory(&self) -> &[(usize, f64)] {
        &self.c_trajectory
    }

    /// Tuning scalar in force after burn-in.
    pub fn final_c(&self) -> f64 {
        self.c_trajectory.last().map_or(f64::NAN, |&(_, c)| c)
    }

    /// 0-based indices of retained post-burn-in draws:
    /// `(len - burn_in) / thinning` of them, ending each thinning block.
    pub fn kept_indices(&self) -> impl Iterator<Item = usize> + '_ {
        let start = self.burn_in.min(self.len());
        let count = (self.len() - start) / self.thinning;
        (0..count).map(move |k| start + (k + 1) * self.thinning - 1)
    }

    pub fn kept_len(&self) -> usize {
        (self.len() - self.burn_in.min(self.len())) / self.thinning
    }

    /// Acceptance rate of the spillover step after burn-in.
    pub fn acceptance_rate(&self) -> f64 {
        rate(&self.accepted[self.burn_in.min(self.len())..])
    }

    pub fn burn_in_acceptance_rate(&self) -> f64 {
        rate(&self.accepted[..self.burn_in.min(self.len())])
    }

    pub fn kept_rho(&self, k: usize) -> Vec<f64> {
        self.kept_indices().map(|g| self.rho[g].to_array()[k]).collect()
    }

    pub fn kept_sigma2(&self) -> Vec<f64> {
        self.kept_indices().map(|g| self.sigma2[g]).collect()
    }

    pub fn kept_mu(&self) -> Vec<&DVector<f64>> {
        self.kept_indices().map(|g| &self.mu[g]).collect()
    }

    /// Post-burn-in posterior mean of each site effect.
    pub fn mu_posterior_mean(&self) -> DVector<f64> {
        let kept = self.kept_mu();
        let mut acc = DVector::zeros(self.n);
        for m in &kept {
            acc += *m;
        }
        acc / kept.len().max(1) as f64
    }

    /// Elementwise posterior median of `h` over the stored draws.
    pub fn h_posterior_median(&self) -> Result<DMatrix<f64>> {
        median_panel(self.n, self.t_len, self.h.iter().map(|(_, h)| h))
    }

    pub fn summary(&self) -> Result<PosteriorSummary> {
        PosteriorSummary::from_chains(std::slice::from_ref(self))
    }
}

fn rate(xs: &[bool]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().filter(|&&a| a).count() as f64 / xs.len() as f64
    }
}

fn median_panel<'a>(
    n: usize,
    t_len: usize,
    draws: impl Iterator<Item = &'a DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let draws: Vec<&DMatrix<f64>> = draws.collect();
    if draws.is_empty() {
        return Err(Error::InvalidInput("no stored h draws".into()));
    }
    let mut buf = vec![0.0; draws.len()];
    Ok(DMatrix::from_fn(n, t_len, |i, t| {
        for (b, d) in buf.iter_mut().zip(&draws) {
            *b = d[(i, t)];
        }
        buf.sort_by(f64::total_cmp);
        stats::quantile_sorted(&buf, 0.5)
    }))
}

/// Median, 95% credible interval and mean of one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
    pub mean: f64,
    pub sd: f64,
}

impl ParamSummary {
    pub fn from_draws(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::InvalidInput("cannot summarize zero draws".into()));
        }
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(ParamSummary {
            median: stats::quantile_sorted(&sorted, 0.5),
            q025: stats::quantile_sorted(&sorted, 0.025),
            q975: stats::quantile_sorted(&sorted, 0.975),
            mean: stats::mean(xs),
            sd: if xs.len() > 1 { stats::variance(xs).sqrt() } else { 0.0 },
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.q025 <= x && x <= self.q975
    }

    pub fn is_ordered(&self) -> bool {
        self.q025 <= self.median && self.median <= self.q975
    }
}

/// 5/50/95% band over one site (across time) or one period (across sites).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileBand {
    pub index: usize,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
}

impl QuantileBand {
    fn from_values(index: usize, xs: &mut [f64]) -> Self {
        xs.sort_by(f64::total_cmp);
        QuantileBand {
            index,
            q05: stats::quantile_sorted(xs, 0.05),
            median: stats::quantile_sorted(xs, 0.5),
            q95: stats::quantile_sorted(xs, 0.95),
        }
    }

    pub fn is_ordered(&self) -> bool {
        self.q05 <= self.median && self.median <= self.q95
    }
}

/// Elementwise median of the stored `h` draws of all chains.
pub fn pooled_h_median(chains: &[PosteriorDraws]) -> Result<DMatrix<f64>> {
    let first = chains
        .first()
        .ok_or_else(|| Error::InvalidInput("no chains to summarize".into()))?;
    median_panel(first.n, first.t_len, chains.iter().flat_map(|c| c.h.iter().map(|(_, h)| h)))
}

/// Per-site (across time) and per-period (across sites) bands of an
/// `n x T` panel.
pub fn quantile_bands(panel: &DMatrix<f64>) -> (Vec<QuantileBand>, Vec<QuantileBand>) {
    let spatial = (0..panel.nrows())
        .map(|i| {
            let mut row: Vec<f64> = panel.row(i).iter().copied().collect();
            QuantileBand::from_values(i, &mut row)
        })
        .collect();
    let temporal = (0..panel.ncols())
        .map(|t| {
            let mut col: Vec<f64> = panel.column(t).iter().copied().collect();
            QuantileBand::from_values(t, &mut col)
        })
        .collect();
    (spatial, temporal)
}

/// Pooled post-burn-in summary over one or more chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub rho1: ParamSummary,
    pub rho2: ParamSummary,
    pub rho3: ParamSummary,
    pub sigma2: ParamSummary,
    /// Cross-site average of `mu`, per draw.
    pub mu_average: ParamSummary,
    /// Panel average of `h`, per stored draw.
    pub h_average: ParamSummary,
    pub mu_mean: Vec<f64>,
    pub acceptance_rate: f64,
    pub burn_in_acceptance_rate: f64,
    pub final_c: Vec<f64>,
    pub chains: usize,
    pub kept_draws: usize,
    /// Posterior-median `h` of each site, summarized across time.
    pub spatial: Vec<QuantileBand>,
    /// Posterior-median `h` of each period, summarized across sites.
    pub temporal: Vec<QuantileBand>,
}

impl PosteriorSummary {
    pub fn from_chains(chains: &[PosteriorDraws]) -> Result<Self> {
        let first = chains
            .first()
            .ok_or_else(|| Error::InvalidInput("no chains to summarize".into()))?;
        let (n, t_len) = (first.n, first.t_len);
        if chains.iter().any(|c| c.n != n || c.t_len != t_len) {
            return Err(Error::InvalidDimension("chains have different panel shapes".into()));
        }
        let pool = |f: &dyn Fn(&PosteriorDraws) -> Vec<f64>| -> Vec<f64> {
            chains.iter().flat_map(f).collect()
        };
        let rho1 = ParamSummary::from_draws(&pool(&|c| c.kept_rho(0)))?;
        let rho2 = ParamSummary::from_draws(&pool(&|c| c.kept_rho(1)))?;
        let rho3 = ParamSummary::from_draws(&pool(&|c| c.kept_rho(2)))?;
        let sigma2 = ParamSummary::from_draws(&pool(&|c| c.kept_sigma2()))?;
        let mu_average =
            ParamSummary::from_draws(&pool(&|c| c.kept_mu().iter().map(|m| m.mean()).collect()))?;
        let h_average = ParamSummary::from_draws(&pool(&|c| c.h.iter().map(|(_, h)| h.mean()).collect()))?;

        let mut mu_sum = DVector::zeros(n);
        let mut count = 0usize;
        for c in chains {
            for m in c.kept_mu() {
                mu_sum += m;
                count += 1;
            }
        }
        let mu_mean = (mu_sum / count as f64).as_slice().to_vec();

        let median = pooled_h_median(chains)?;
        let (spatial, temporal) = quantile_bands(&median);

        let accepted: Vec<bool> = chains
            .iter()
            .flat_map(|c| c.accepted[c.burn_in.min(c.len())..].iter().copied())
            .collect();
        let burn: Vec<bool> = chains
            .iter()
            .flat_map(|c| c.accepted[..c.burn_in.min(c.len())].iter().copied())
            .collect();

        Ok(PosteriorSummary {
            rho1,
            rho2,
            rho3,
            sigma2,
            mu_average,
            h_average,
            mu_mean,
            acceptance_rate: rate(&accepted),
            burn_in_acceptance_rate: rate(&burn),
            final_c: chains.iter().map(|c| c.final_c()).collect(),
            chains: chains.len(),
            kept_draws: chains.iter().map(|c| c.kept_len()).sum(),
            spatial,
            temporal,
        })
    }

    /// `(name, summary)` rows in table order.
    pub fn rows(&self) -> [(&'static str, &ParamSummary); 6] {
        [
            ("rho1", &self.rho1),
            ("rho2", &self.rho2),
            ("rho3", &self.rho3),
            ("sigma2", &self.sigma2),
            ("mu_average", &self.mu_average),
            ("h_average", &self.h_average),
        ]
    }

    /// All credible intervals and bands are ordered.
    pub fn quantiles_ordered(&self) -> bool {
        self.rows().iter().all(|(_, s)| s.is_ordered())
            && self.spatial.iter().all(QuantileBand::is_ordered)
            && self.temporal.iter().all(QuantileBand::is_ordered)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake(len: usize, burn_in: usize, thinning: usize) -> PosteriorDraws {
        let cfg = GibbsConfig {
            chain_length: len,
            burn_in,
            thinning,
            h_thinning: 2,
            ..GibbsConfig::default()
        };
        let mut d = PosteriorDraws::with_capacity(2, 3, &cfg);
        for g in 1..=len {
            let x = g as f64;
            let keep_h = g > burn_in && (g - burn_in) % 2 == 0;
            d.push(
                SpilloverParams::new(x / 1000.0, 0.0, 0.0),
                x,
                DVector::from_vec(vec![x, -x]),
                keep_h.then(|| DMatrix::from_element(2, 3, x)),
                g % 2 == 0,
            );
        }
        d.set_c_trajectory(vec![(0, 1.0), (50, 1.1)]);
        d
    }

    #[test]
    fn kept_draw_count_follows_thinning() {
        let d = fake(100, 20, 4);
        assert_eq!(d.len(), 100);
        assert_eq!(d.kept_len(), 20);
        let idx: Vec<usize> = d.kept_indices().collect();
        assert_eq!(idx.len(), 20);
        assert_eq!(idx[0], 23);
        assert_eq!(*idx.last().unwrap(), 99);
        assert_eq!(d.h_draws().len(), 40);
        assert_eq!(d.final_c(), 1.1);
        assert!((d.acceptance_rate() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn summary_quantiles() {
        let d = fake(120, 20, 1);
        let s = d.summary().unwrap();
        assert!(s.quantiles_ordered());
        // sigma2 draws 21..=120
        assert!((s.sigma2.median - 70.5).abs() < 1e-12);
        assert!((s.sigma2.mean - 70.5).abs() < 1e-12);
        assert!(s.sigma2.contains(70.0));
        assert!(!s.sigma2.contains(1.0));
        assert!(s.mu_average.median.abs() < 1e-12);
        assert_eq!(s.mu_mean.len(), 2);
        assert_eq!(s.spatial.len(), 2);
        assert_eq!(s.temporal.len(), 3);
        assert_eq!(s.kept_draws, 100);
    }

    #[test]
    fn param_summary_matches_type7_quantiles() {
        let xs: Vec<f64> = (0..=40).map(|k| k as f64).collect();
        let s = ParamSummary::from_draws(&xs).unwrap();
        assert!((s.q025 - 1.0).abs() < 1e-12);
        assert!((s.q975 - 39.0).abs() < 1e-12);
        assert_eq!(s.median, 20.0);
        assert!(ParamSummary::from_draws(&[]).is_err());
    }
}
