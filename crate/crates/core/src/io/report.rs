//! Draw files, trace files and the posterior summary report.
//!
//! An estimate directory looks like
//!
//! ```text
//! run.json                  sites, hashes and shapes
//! h_median.csv              pooled posterior-median h (site_id,time,value)
//! chain_K/draws.csv         kept draws: iteration,rho1,rho2,rho3,sigma2,mu_average
//! chain_K/h_average.csv     iteration,h_average for every stored h draw
//! chain_K/trace_*.csv       iteration,value over the whole chain
//! chain_K/chain.json        acceptance counts, tuning history, mean of mu
//! summary.json / .csv       the report
//! spatial_quantiles.csv     site_id,[lat,lon,]median_h,q05,q95
//! temporal_quantiles.csv    time,median_h,q05,q95
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::panel::{csv_field, read_panel, write_panel, Panel};
use super::{create_with_header, csv_reader, read_json, write_json, CONFIG_HASH_KEY};
use crate::error::{Error, Result};
use crate::gibbs::{quantile_bands, ParamSummary, PosteriorDraws, QuantileBand};

pub const RUN_FILE: &str = "run.json";
pub const H_MEDIAN_FILE: &str = "h_median.csv";
pub const CHAIN_FILE: &str = "chain.json";
pub const DRAWS_FILE: &str = "draws.csv";
pub const H_AVERAGE_FILE: &str = "h_average.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SPATIAL_FILE: &str = "spatial_quantiles.csv";
pub const TEMPORAL_FILE: &str = "temporal_quantiles.csv";

pub fn chain_dir(out: &Path, k: usize) -> PathBuf {
    out.join(format!("chain_{k}"))
}

/// What `summarize` needs to know about an estimate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub chains: usize,
    pub n: usize,
    pub t_len: usize,
    pub site_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<Vec<(f64, f64)>>,
    pub weights_hash: String,
    pub panel: String,
    pub weights: String,
}

/// Per-chain bookkeeping that is not a draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub config_hash: String,
    pub chain: usize,
    pub chain_length: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub h_thinning: usize,
    pub kept_draws: usize,
    pub accepted: usize,
    pub proposed: usize,
    pub burn_in_accepted: usize,
    pub burn_in_proposed: usize,
    pub final_c: f64,
    pub c_trajectory: Vec<(usize, f64)>,
    /// Posterior mean of `mu` over the kept draws.
    pub mu_mean: Vec<f64>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn write_trace(path: &Path, hash: &str, values: impl Iterator<Item = (usize, f64)>) -> Result<()> {
    let mut out = create_with_header(path, &[(CONFIG_HASH_KEY, hash)])?;
    writeln!(out, "iteration,value").map_err(io_err(path))?;
    for (g, v) in values {
        writeln!(out, "{g},{v:?}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Writes one chain's files into `dir`.
pub fn write_chain(dir: &Path, chain: usize, draws: &PosteriorDraws, hash: &str) -> Result<()> {
    let header = [(CONFIG_HASH_KEY, hash)];
    let path = dir.join(DRAWS_FILE);
    let mut out = create_with_header(&path, &header)?;
    writeln!(out, "iteration,rho1,rho2,rho3,sigma2,mu_average").map_err(io_err(&path))?;
    for g in draws.kept_indices() {
        let r = draws.rho()[g];
        writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?}",
            g + 1,
            r.rho1,
            r.rho2,
            r.rho3,
            draws.sigma2()[g],
            draws.mu()[g].mean()
        )
        .map_err(io_err(&path))?;
    }
    out.flush().map_err(io_err(&path))?;

    let path = dir.join(H_AVERAGE_FILE);
    let mut out = create_with_header(&path, &header)?;
    writeln!(out, "iteration,h_average").map_err(io_err(&path))?;
    for (g, h) in draws.h_draws() {
        writeln!(out, "{g},{:?}", h.mean()).map_err(io_err(&path))?;
    }
    out.flush().map_err(io_err(&path))?;

    let idx = |k: usize| k + 1;
    let rho = draws.rho();
    write_trace(&dir.join("trace_rho1.csv"), hash, rho.iter().enumerate().map(|(k, r)| (idx(k), r.rho1)))?;
    write_trace(&dir.join("trace_rho2.csv"), hash, rho.iter().enumerate().map(|(k, r)| (idx(k), r.rho2)))?;
    write_trace(&dir.join("trace_rho3.csv"), hash, rho.iter().enumerate().map(|(k, r)| (idx(k), r.rho3)))?;
    write_trace(
        &dir.join("trace_sigma2.csv"),
        hash,
        draws.sigma2().iter().enumerate().map(|(k, &s)| (idx(k), s)),
    )?;
    write_trace(
        &dir.join("trace_mu_average.csv"),
        hash,
        draws.mu().iter().enumerate().map(|(k, m)| (idx(k), m.mean())),
    )?;
    write_trace(&dir.join("trace_c.csv"), hash, draws.c_trajectory().iter().copied())?;

    let burn = draws.burn_in().min(draws.len());
    let count = |xs: &[bool]| xs.iter().filter(|&&a| a).count();
    let meta = ChainMeta {
        config_hash: hash.to_string(),
        chain,
        chain_length: draws.len(),
        burn_in: draws.burn_in(),
        thinning: draws.thinning(),
        h_thinning: draws.h_thinning(),
        kept_draws: draws.kept_len(),
        accepted: count(&draws.accepted()[burn..]),
        proposed: draws.len() - burn,
        burn_in_accepted: count(&draws.accepted()[..burn]),
        burn_in_proposed: burn,
        final_c: draws.final_c(),
        c_trajectory: draws.c_trajectory().to_vec(),
        mu_mean: draws.mu_posterior_mean().as_slice().to_vec(),
    };
    write_json(&dir.join(CHAIN_FILE), &meta)
}

/// Median and 95% interval of one parameter, as a table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub parameter: String,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
    pub mean: f64,
    pub sd: f64,
}

impl ParamRow {
    fn new(name: &str, s: &ParamSummary) -> Self {
        ParamRow {
            parameter: name.to_string(),
            median: s.median,
            q025: s.q025,
            q975: s.q975,
            mean: s.mean,
            sd: s.sd,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.q025 <= x && x <= self.q975
    }

    pub fn is_ordered(&self) -> bool {
        self.q025 <= self.median && self.median <= self.q975
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteBand {
    pub site_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    pub median_h: f64,
    pub q05: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeBand {
    pub time: usize,
    pub median_h: f64,
    pub q05: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteValue {
    pub site_id: String,
    pub value: f64,
}

/// Posterior medians and 95% credible intervals for `rho1`, `rho2`, `rho3`,
/// `sigma2`, the average site effect and the average log-volatility, plus
/// the `h` quantile bands over space and time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub config_hash: String,
    pub chains: usize,
    pub kept_draws: usize,
    /// Post-burn-in acceptance rate of the `rho` step, pooled over chains.
    pub acceptance_rate: f64,
    pub burn_in_acceptance_rate: f64,
    pub final_c: Vec<f64>,
    pub parameters: Vec<ParamRow>,
    pub mu_mean: Vec<SiteValue>,
    /// Posterior-median `h` of each site, across time.
    pub spatial: Vec<SiteBand>,
    /// Posterior-median `h` of each period, across sites.
    pub temporal: Vec<TimeBand>,
}

pub const PARAMETER_ORDER: [&str; 6] = ["rho1", "rho2", "rho3", "sigma2", "mu_average", "h_average"];

impl SummaryReport {
    pub fn parameter(&self, name: &str) -> Option<&ParamRow> {
        self.parameters.iter().find(|r| r.parameter == name)
    }

    pub fn quantiles_ordered(&self) -> bool {
        self.parameters.iter().all(ParamRow::is_ordered)
            && self.spatial.iter().all(|b| b.q05 <= b.median_h && b.median_h <= b.q95)
            && self.temporal.iter().all(|b| b.q05 <= b.median_h && b.median_h <= b.q95)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    /// Writes `summary.json`, `summary.csv` and the two quantile files.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(SUMMARY_JSON), self)?;
        let header = [(CONFIG_HASH_KEY, self.config_hash.as_str())];

        let path = dir.join(SUMMARY_CSV);
        let mut out = create_with_header(&path, &header)?;
        writeln!(out, "parameter,median,q025,q975").map_err(io_err(&path))?;
        for r in &self.parameters {
            writeln!(out, "{},{:?},{:?},{:?}", r.parameter, r.median, r.q025, r.q975)
                .map_err(io_err(&path))?;
        }
        out.flush().map_err(io_err(&path))?;

        let path = dir.join(SPATIAL_FILE);
        let mut out = create_with_header(&path, &header)?;
        let with_coords = self.spatial.iter().all(|b| b.lat.is_some() && b.lon.is_some());
        if with_coords {
            writeln!(out, "site_id,lat,lon,median_h,q05,q95")
        } else {
            writeln!(out, "site_id,median_h,q05,q95")
        }
        .map_err(io_err(&path))?;
        for b in &self.spatial {
            let id = csv_field(&b.site_id);
            match (with_coords, b.lat, b.lon) {
                (true, Some(lat), Some(lon)) => writeln!(
                    out,
                    "{id},{lat:?},{lon:?},{:?},{:?},{:?}",
                    b.median_h, b.q05, b.q95
                ),
                _ => writeln!(out, "{id},{:?},{:?},{:?}", b.median_h, b.q05, b.q95),
            }
            .map_err(io_err(&path))?;
        }
        out.flush().map_err(io_err(&path))?;

        let path = dir.join(TEMPORAL_FILE);
        let mut out = create_with_header(&path, &header)?;
        writeln!(out, "time,median_h,q05,q95").map_err(io_err(&path))?;
        for b in &self.temporal {
            writeln!(out, "{},{:?},{:?},{:?}", b.time, b.median_h, b.q05, b.q95).map_err(io_err(&path))?;
        }
        out.flush().map_err(io_err(&path))
    }
}

#[derive(Deserialize)]
struct DrawRow {
    #[allow(dead_code)]
    iteration: usize,
    rho1: f64,
    rho2: f64,
    rho3: f64,
    sigma2: f64,
    mu_average: f64,
}

#[derive(Deserialize)]
struct HAverageRow {
    #[allow(dead_code)]
    iteration: usize,
    h_average: f64,
}

fn check_hash(path: &Path, expected: &str, force: bool) -> Result<()> {
    let found = super::header_value(path, CONFIG_HASH_KEY)?;
    match found {
        Some(h) if h != expected => {
            let msg = format!(
                "{} was written under config {h}, but the run is {expected} (use --force to ignore)",
                path.display()
            );
            if force {
                log::warn!("{msg}");
                Ok(())
            } else {
                Err(Error::InvalidInput(msg))
            }
        }
        _ => Ok(()),
    }
}

/// Writes the run manifest and pooled `h` median next to the chain
/// directories.
pub fn write_run(out: &Path, manifest: &RunManifest, h_median: &DMatrix<f64>) -> Result<()> {
    write_json(&out.join(RUN_FILE), manifest)?;
    let panel = Panel::new(manifest.site_ids.clone(), h_median.clone())?;
    write_panel(
        out.join(H_MEDIAN_FILE),
        &panel,
        &[(CONFIG_HASH_KEY, manifest.config_hash.as_str())],
    )
}

/// Rebuilds the summary report from an estimate directory.
pub fn summarize_dir(out: &Path, force: bool) -> Result<SummaryReport> {
    let run_path = out.join(RUN_FILE);
    if !run_path.exists() {
        return Err(Error::InvalidInput(format!(
            "{} not found; is {} an estimate output directory?",
            run_path.display(),
            out.display()
        )));
    }
    let run: RunManifest = read_json(&run_path)?;
    let hash = run.config_hash.as_str();

    let mut cols: [Vec<f64>; 6] = Default::default();
    let mut mu_sum = vec![0.0; run.n];
    let (mut kept, mut acc, mut prop, mut bacc, mut bprop) = (0usize, 0usize, 0usize, 0usize, 0usize);
    let mut final_c = Vec::with_capacity(run.chains);
    for k in 0..run.chains {
        let dir = chain_dir(out, k);
        let meta: ChainMeta = read_json(&dir.join(CHAIN_FILE))?;
        if meta.config_hash != hash {
            let msg = format!(
                "chain {k} was produced under config {}, the run under {hash}",
                meta.config_hash
            );
            if !force {
                return Err(Error::InvalidInput(format!("{msg} (use --force to ignore)")));
            }
            log::warn!("{msg}");
        }
        if meta.mu_mean.len() != run.n {
            return Err(Error::InvalidDimension(format!(
                "chain {k}: mean of mu has {} entries for {} sites",
                meta.mu_mean.len(),
                run.n
            )));
        }

        let path = dir.join(DRAWS_FILE);
        check_hash(&path, hash, force)?;
        let mut rows = 0usize;
        for row in csv_reader(&path)?.deserialize::<DrawRow>() {
            let r = row?;
            for (c, v) in cols.iter_mut().zip([r.rho1, r.rho2, r.rho3, r.sigma2, r.mu_average]) {
                c.push(v);
            }
            rows += 1;
        }
        if rows != meta.kept_draws {
            return Err(Error::InvalidInput(format!(
                "{} has {rows} rows, chain metadata says {}",
                path.display(),
                meta.kept_draws
            )));
        }
        let path = dir.join(H_AVERAGE_FILE);
        check_hash(&path, hash, force)?;
        for row in csv_reader(&path)?.deserialize::<HAverageRow>() {
            cols[5].push(row?.h_average);
        }

        for (s, m) in mu_sum.iter_mut().zip(&meta.mu_mean) {
            *s += m * meta.kept_draws as f64;
        }
        kept += meta.kept_draws;
        acc += meta.accepted;
        prop += meta.proposed;
        bacc += meta.burn_in_accepted;
        bprop += meta.burn_in_proposed;
        final_c.push(meta.final_c);
    }

    let mut parameters = Vec::with_capacity(6);
    for (name, xs) in PARAMETER_ORDER.iter().zip(&cols) {
        let s = ParamSummary::from_draws(xs).map_err(|e| Error::InvalidInput(format!("{name}: {e}")))?;
        parameters.push(ParamRow::new(name, &s));
    }

    let h_path = out.join(H_MEDIAN_FILE);
    check_hash(&h_path, hash, force)?;
    let h = read_panel(&h_path)?.reorder(&run.site_ids)?;
    if h.t_len() != run.t_len {
        return Err(Error::InvalidDimension(format!(
            "{} covers {} periods, the run {}",
            h_path.display(),
            h.t_len(),
            run.t_len
        )));
    }
    let (spatial, temporal) = quantile_bands(&h.values);
    let spatial = spatial
        .iter()
        .map(|b: &QuantileBand| {
            let c = run.coordinates.as_ref().map(|c| c[b.index]);
            SiteBand {
                site_id: run.site_ids[b.index].clone(),
                lat: c.map(|c| c.0),
                lon: c.map(|c| c.1),
                median_h: b.median,
                q05: b.q05,
                q95: b.q95,
            }
        })
        .collect();
    let temporal = temporal
        .iter()
        .map(|b| TimeBand {
            time: b.index,
            median_h: b.median,
            q05: b.q05,
            q95: b.q95,
        })
        .collect();

    let rate = |a: usize, p: usize| if p == 0 { f64::NAN } else { a as f64 / p as f64 };
    Ok(SummaryReport {
        config_hash: hash.to_string(),
        chains: run.chains,
        kept_draws: kept,
        acceptance_rate: rate(acc, prop),
        burn_in_acceptance_rate: rate(bacc, bprop),
        final_c,
        parameters,
        mu_mean: run
            .site_ids
            .iter()
            .zip(&mu_sum)
            .map(|(id, s)| SiteValue {
                site_id: id.clone(),
                value: s / kept.max(1) as f64,
            })
            .collect(),
        spatial,
        temporal,
    })
}
