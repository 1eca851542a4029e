//! `weights`, `simulate`, `estimate`, `summarize` and `moments`.
//!
//! Each command takes a parsed [`RunConfig`] and an output directory and
//! returns what it wrote, so the binary only handles arguments and exit
//! codes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, WeightsScheme, WeightsSection};
use super::panel::{read_panel, write_panel, Panel};
use super::report::{self, RunManifest, SummaryReport};
use super::weights_file::{read_coordinates, read_weights, weights_hash, write_weights, WeightsMeta};
use super::{header_value, read_json, write_json, CONFIG_HASH_KEY, WEIGHTS_HASH_KEY};
use crate::dgp::{simulate, SimulationConfig};
use crate::error::{Error, Result};
use crate::gibbs::{pooled_h_median, run_chains, PosteriorDraws};
use crate::moments::{MomentModel, MomentReport};
use crate::spacetime::SpilloverParams;
use crate::weights::{Contiguity, WeightsMatrix};

pub const WEIGHTS_FILE: &str = "weights.csv";
pub const PANEL_FILE: &str = "panel.csv";
pub const TRUE_H_FILE: &str = "h_true.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MOMENTS_FILE: &str = "moments.json";

/// Builds the matrix described by a `[weights]` section.
pub fn build_weights(section: &WeightsSection, cfg: &RunConfig) -> Result<(WeightsMatrix, WeightsMeta)> {
    section.validate()?;
    let (w, ids, construction, coords) = match section.scheme {
        WeightsScheme::Rook | WeightsScheme::Queen => {
            let (k, m) = (section.rows.unwrap_or(0), section.cols.unwrap_or(0));
            let scheme = if section.scheme == WeightsScheme::Rook {
                Contiguity::Rook
            } else {
                Contiguity::Queen
            };
            let w = WeightsMatrix::lattice(k, m, scheme, section.permutation_seed)?;
            let ids = (0..w.n()).map(|i| i.to_string()).collect();
            let name = if scheme == Contiguity::Rook { "rook" } else { "queen" };
            (w, ids, format!("{name} {k}x{m}"), None)
        }
        WeightsScheme::Distance => {
            let path = cfg.resolve(section.coordinates.as_deref().unwrap_or(Path::new("")));
            let (ids, coords) = read_coordinates(&path)?;
            let threshold = section.threshold_miles.unwrap_or(0.0);
            let w = WeightsMatrix::distance_contiguity(&coords, threshold)?;
            (w, ids, format!("distance <= {threshold} miles"), Some(coords))
        }
    };
    let w = if section.row_normalize { w.row_normalize() } else { w };
    let meta = WeightsMeta::describe(&w, ids, construction, coords, Some(cfg.hash()?))?;
    Ok((w, meta))
}

/// `[weights]` if present, otherwise the file named by `data.weights`.
fn weights_for(cfg: &RunConfig) -> Result<(WeightsMatrix, WeightsMeta)> {
    if let Some(section) = &cfg.weights {
        return build_weights(section, cfg);
    }
    let path = cfg
        .data
        .weights
        .as_ref()
        .ok_or_else(|| Error::Config("need a [weights] section or data.weights".into()))?;
    let file = read_weights(cfg.resolve(path))?;
    Ok((file.matrix, file.meta))
}

/// Writes `weights.csv` and its sidecar; returns the metadata.
pub fn cmd_weights(cfg: &RunConfig, out: &Path) -> Result<WeightsMeta> {
    let section = cfg.require_weights()?;
    let (w, meta) = build_weights(section, cfg)?;
    write_weights(out.join(WEIGHTS_FILE), &w, &meta)?;
    Ok(meta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub config_hash: String,
    pub weights_hash: String,
    pub seed: u64,
    pub n: usize,
    pub t_len: usize,
    pub rho: SpilloverParams,
    pub sigma2: f64,
    /// Realized site effects.
    pub mu: Vec<f64>,
    pub site_ids: Vec<String>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub manifest: SimulationManifest,
    pub panel: PathBuf,
    pub true_h: PathBuf,
    pub weights: PathBuf,
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<SimulateOutcome> {
    let sim = cfg.require_simulate()?;
    let hash = cfg.hash()?;
    let (w, mut meta) = weights_for(cfg)?;
    meta.config_hash = Some(hash.clone());

    let mut sc = SimulationConfig::new(w.clone(), sim.t_len, sim.rho(), sim.sigma2, sim.mu_spec()?)
        .with_seed(sim.seed);
    sc.k_truncation = sim.k_truncation;
    let panel = simulate(&sc)?;

    let seed = sim.seed.to_string();
    let header = [
        (CONFIG_HASH_KEY, hash.as_str()),
        (WEIGHTS_HASH_KEY, meta.weights_hash.as_str()),
        ("seed", seed.as_str()),
    ];
    let paths = [out.join(PANEL_FILE), out.join(TRUE_H_FILE), out.join(WEIGHTS_FILE)];
    write_panel(&paths[0], &Panel::new(meta.site_ids.clone(), panel.y.clone())?, &header)?;
    write_panel(&paths[1], &Panel::new(meta.site_ids.clone(), panel.h.clone())?, &header)?;
    write_weights(&paths[2], &w, &meta)?;

    let manifest = SimulationManifest {
        config_hash: hash,
        weights_hash: meta.weights_hash.clone(),
        seed: sim.seed,
        n: w.n(),
        t_len: sim.t_len,
        rho: sim.rho(),
        sigma2: sim.sigma2,
        mu: panel.mu.as_slice().to_vec(),
        site_ids: meta.site_ids.clone(),
        files: [PANEL_FILE, TRUE_H_FILE, WEIGHTS_FILE].map(String::from).to_vec(),
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    let [panel, true_h, weights] = paths;
    Ok(SimulateOutcome {
        manifest,
        panel,
        true_h,
        weights,
    })
}

#[derive(Debug, Clone)]
pub struct EstimateOutcome {
    pub report: SummaryReport,
    pub draws: Vec<PosteriorDraws>,
}

fn refuse_or_warn(msg: String, force: bool) -> Result<()> {
    if force {
        log::warn!("{msg}");
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{msg} (use --force to override)")))
    }
}

/// Runs the sampler on `data.panel` with `data.weights` and writes draws,
/// traces and the summary into `out`.
pub fn cmd_estimate(cfg: &RunConfig, out: &Path, force: bool) -> Result<EstimateOutcome> {
    let hash = cfg.hash()?;
    let panel_path = cfg
        .data
        .panel
        .as_ref()
        .map(|p| cfg.resolve(p))
        .ok_or_else(|| Error::Config("data.panel is required for estimate".into()))?;
    let weights_path = cfg
        .data
        .weights
        .as_ref()
        .map(|p| cfg.resolve(p))
        .ok_or_else(|| Error::Config("data.weights is required for estimate".into()))?;

    let wf = read_weights(&weights_path)?;
    let content_hash = weights_hash(&wf.matrix);
    if content_hash != wf.meta.weights_hash {
        refuse_or_warn(
            format!(
                "{} does not match the hash recorded in its metadata",
                weights_path.display()
            ),
            force,
        )?;
    }
    if let Some(h) = header_value(&panel_path, WEIGHTS_HASH_KEY)? {
        if h != content_hash {
            refuse_or_warn(
                format!(
                    "{} was simulated with weights {h}, but {} holds weights {content_hash}",
                    panel_path.display(),
                    weights_path.display()
                ),
                force,
            )?;
        }
    }
    let run_path = out.join(report::RUN_FILE);
    if run_path.exists() {
        let old: RunManifest = read_json(&run_path)?;
        if old.config_hash != hash {
            refuse_or_warn(
                format!(
                    "{} already holds results of config {}, this run is {hash}",
                    out.display(),
                    old.config_hash
                ),
                force,
            )?;
        }
    }

    let panel = read_panel(&panel_path)?.reorder(&wf.meta.site_ids)?;
    let prior = cfg.prior.to_prior(panel.n())?;
    let draws = run_chains(&panel.values, &wf.matrix, &prior, &cfg.chain, cfg.chains)?;

    for (k, d) in draws.iter().enumerate() {
        report::write_chain(&report::chain_dir(out, k), k, d, &hash)?;
    }
    let manifest = RunManifest {
        config_hash: hash,
        chains: draws.len(),
        n: panel.n(),
        t_len: panel.t_len(),
        site_ids: wf.meta.site_ids.clone(),
        coordinates: wf.meta.coordinates.clone(),
        weights_hash: content_hash,
        panel: panel_path.display().to_string(),
        weights: weights_path.display().to_string(),
    };
    report::write_run(out, &manifest, &pooled_h_median(&draws)?)?;
    let report = cmd_summarize(out, force)?;
    Ok(EstimateOutcome { report, draws })
}

/// Rebuilds and rewrites the summary files of an estimate directory.
pub fn cmd_summarize(out: &Path, force: bool) -> Result<SummaryReport> {
    let report = report::summarize_dir(out, force)?;
    report.write_all(out)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsOutput {
    pub config_hash: String,
    pub rho: SpilloverParams,
    pub sigma2: f64,
    pub t_len: usize,
    pub reports: Vec<MomentReport>,
}

/// Evaluates every `[[moments.request]]`; writes `moments.json` when `out`
/// is given.
pub fn cmd_moments(cfg: &RunConfig, out: Option<&Path>) -> Result<MomentsOutput> {
    let m = cfg.require_moments()?;
    if m.requests.is_empty() {
        return Err(Error::Config("no [[moments.request]] entries".into()));
    }
    let (w, _) = weights_for(cfg)?;
    let model = MomentModel::new(m.rho(), m.mu_vector(w.n())?, m.sigma2, &w, m.t_len, m.k_truncation)?;
    let reports = m
        .requests
        .iter()
        .map(|r| model.report(r))
        .collect::<Result<Vec<_>>>()?;
    let output = MomentsOutput {
        config_hash: cfg.hash()?,
        rho: m.rho(),
        sigma2: m.sigma2,
        t_len: m.t_len,
        reports,
    };
    if let Some(dir) = out {
        write_json(&dir.join(MOMENTS_FILE), &output)?;
    }
    Ok(output)
}
