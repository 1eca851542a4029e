//! TOML run configuration.
//!
//! One file drives every subcommand; each command reads the sections it
//! needs. Relative paths are resolved against the file's directory.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::hash_of;
use crate::dgp::MuSpec;
use crate::error::{Error, Result};
use crate::gibbs::{GibbsConfig, PriorSpec};
use crate::moments::MomentRequest;
use crate::spacetime::{SpilloverParams, DEFAULT_K_TRUNCATION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Independent chains run by `estimate`.
    #[serde(default = "one")]
    pub chains: usize,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub weights: Option<WeightsSection>,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub chain: GibbsConfig,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub moments: Option<MomentsSection>,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_k() -> usize {
    DEFAULT_K_TRUNCATION
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            chains: 1,
            data: DataSection::default(),
            weights: None,
            simulate: None,
            chain: GibbsConfig::default(),
            prior: PriorSection::default(),
            moments: None,
            base_dir: PathBuf::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Long-format panel read by `estimate`.
    pub panel: Option<PathBuf>,
    /// Weights triplets read by `estimate` (and by `simulate` when there is
    /// no `[weights]` section).
    pub weights: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsScheme {
    Rook,
    Queen,
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    pub scheme: WeightsScheme,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub permutation_seed: Option<u64>,
    /// `site_id,lat,lon` file for the distance scheme.
    pub coordinates: Option<PathBuf>,
    pub threshold_miles: Option<f64>,
    #[serde(default = "yes")]
    pub row_normalize: bool,
}

impl WeightsSection {
    pub fn validate(&self) -> Result<()> {
        match self.scheme {
            WeightsScheme::Rook | WeightsScheme::Queen => {
                for (name, v) in [("rows", self.rows), ("cols", self.cols)] {
                    if v.is_none() {
                        return Err(Error::Config(format!(
                            "weights.{name} is required for lattice schemes"
                        )));
                    }
                }
            }
            WeightsScheme::Distance => {
                if self.coordinates.is_none() {
                    return Err(Error::Config(
                        "weights.coordinates is required for the distance scheme".into(),
                    ));
                }
                match self.threshold_miles {
                    None => {
                        return Err(Error::Config(
                            "weights.threshold_miles is required for the distance scheme".into(),
                        ))
                    }
                    Some(t) if !(t > 0.0 && t.is_finite()) => {
                        return Err(Error::Config("weights.threshold_miles must be positive".into()))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// Site effects: `mu_mean` (with optional `mu_sd`) draws i.i.d. normals,
/// `mu_values` fixes them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuSection {
    pub mu_mean: Option<f64>,
    pub mu_sd: Option<f64>,
    pub mu_values: Option<Vec<f64>>,
}

impl MuSection {
    fn to_spec(&self, section: &str) -> Result<MuSpec> {
        match (&self.mu_mean, &self.mu_values) {
            (Some(mean), None) => Ok(MuSpec::Random {
                mean: *mean,
                sd: self.mu_sd.unwrap_or(0.0),
            }),
            (None, Some(v)) if self.mu_sd.is_none() => Ok(MuSpec::Explicit(v.clone())),
            (None, None) => Err(Error::Config(format!(
                "{section}.mu_mean or {section}.mu_values is required"
            ))),
            _ => Err(Error::Config(format!(
                "{section}: give either mu_mean (with optional mu_sd) or mu_values, not both"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub t_len: usize,
    pub rho: [f64; 3],
    pub sigma2: f64,
    #[serde(flatten)]
    pub mu: MuSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k_truncation: usize,
}

impl SimulateSection {
    pub fn rho(&self) -> SpilloverParams {
        SpilloverParams::from_array(self.rho)
    }

    pub fn mu_spec(&self) -> Result<MuSpec> {
        self.mu.to_spec("simulate")
    }
}

/// `mu ~ N(mu_mean 1, mu_var I)`, `sigma2 ~ IG(a, b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub mu_mean: f64,
    pub mu_var: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection {
            mu_mean: 0.0,
            mu_var: 10.0,
            a: 3.0,
            b: 2.0,
        }
    }
}

impl PriorSection {
    pub fn to_prior(&self, n: usize) -> Result<PriorSpec> {
        PriorSpec::isotropic(n, self.mu_mean, self.mu_var, self.a, self.b)
            .map_err(|e| Error::Config(format!("prior: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSection {
    pub t_len: usize,
    pub rho: [f64; 3],
    pub sigma2: f64,
    #[serde(flatten)]
    pub mu: MuSection,
    #[serde(default = "default_k")]
    pub k_truncation: usize,
    #[serde(default, rename = "request")]
    pub requests: Vec<MomentRequest>,
}

impl MomentsSection {
    pub fn rho(&self) -> SpilloverParams {
        SpilloverParams::from_array(self.rho)
    }

    /// Site effects for `n` sites; a scalar `mu_mean` is used for every
    /// site (`mu_sd` is not allowed here).
    pub fn mu_vector(&self, n: usize) -> Result<DVector<f64>> {
        match self.mu.to_spec("moments")? {
            MuSpec::Random { sd, .. } if sd != 0.0 => Err(Error::Config(
                "moments.mu_sd is not supported; moments take fixed site effects".into(),
            )),
            MuSpec::Random { mean, .. } => Ok(DVector::from_element(n, mean)),
            MuSpec::Explicit(v) if v.len() != n => Err(Error::Config(format!(
                "moments.mu_values has {} entries for {n} sites",
                v.len()
            ))),
            MuSpec::Explicit(v) => Ok(DVector::from_vec(v)),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(e))))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::Config("chains must be at least 1".into()));
        }
        self.chain.validate()?;
        if let Some(w) = &self.weights {
            w.validate()?;
        }
        if let Some(s) = &self.simulate {
            if s.t_len == 0 {
                return Err(Error::Config("simulate.t_len must be positive".into()));
            }
            if !(s.sigma2 > 0.0 && s.sigma2.is_finite()) {
                return Err(Error::Config("simulate.sigma2 must be positive".into()));
            }
            s.mu_spec()?;
        }
        if let Some(m) = &self.moments {
            if m.t_len == 0 {
                return Err(Error::Config("moments.t_len must be positive".into()));
            }
            if !(m.sigma2 > 0.0 && m.sigma2.is_finite()) {
                return Err(Error::Config("moments.sigma2 must be positive".into()));
            }
            m.mu.to_spec("moments")?;
        }
        let p = &self.prior;
        if !(p.mu_var > 0.0 && p.a > 0.0 && p.b > 0.0) {
            return Err(Error::Config("prior.mu_var, prior.a and prior.b must be positive".into()));
        }
        Ok(())
    }

    /// Directory relative paths are resolved against.
    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: impl Into<PathBuf>) {
        self.base_dir = dir.into();
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Output directory: `--out` if given, else `data.out_dir`, else the
    /// config's directory.
    pub fn out_dir(&self, cli_out: Option<&Path>) -> PathBuf {
        match (cli_out, &self.data.out_dir) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => self.resolve(p),
            (None, None) => self.base_dir.clone(),
        }
    }

    /// Applies a `--seed` override to both the simulation and the chains.
    pub fn override_seed(&mut self, seed: u64) {
        self.chain.seed = seed;
        if let Some(s) = &mut self.simulate {
            s.seed = seed;
        }
    }

    pub fn hash(&self) -> Result<String> {
        hash_of(self)
    }

    pub fn require_weights(&self) -> Result<&WeightsSection> {
        self.weights
            .as_ref()
            .ok_or_else(|| Error::Config("missing [weights] section".into()))
    }

    pub fn require_simulate(&self) -> Result<&SimulateSection> {
        self.simulate
            .as_ref()
            .ok_or_else(|| Error::Config("missing [simulate] section".into()))
    }

    pub fn require_moments(&self) -> Result<&MomentsSection> {
        self.moments
            .as_ref()
            .ok_or_else(|| Error::Config("missing [moments] section".into()))
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

/// Commented configuration listing every key with its default.
pub const REFERENCE_CONFIG: &str = r#"# stsv run configuration. Every key below shows its default; sections
# without defaults are only needed by the commands that read them.

# Independent chains for `estimate` (each with its own random stream).
chains = 1

[data]
# panel = "panel.csv"        # site_id,time,value (estimate)
# weights = "weights.csv"    # i,j,w triplets plus weights.meta.json
# out_dir = "out"            # overridden by --out

# Needed by `weights` and by `simulate` unless data.weights is given.
# [weights]
# scheme = "queen"           # rook | queen | distance
# rows = 7                   # lattice schemes
# cols = 14
# permutation_seed = 1       # optional random site-to-cell assignment
# coordinates = "coords.csv" # distance scheme: site_id,lat,lon
# threshold_miles = 15.0
# row_normalize = true

# Needed by `simulate`.
# [simulate]
# t_len = 50
# rho = [0.6, 0.35, -0.025]
# sigma2 = 0.25
# mu_mean = 3.3              # i.i.d. N(mu_mean, mu_sd^2) site effects ...
# mu_sd = 0.35
# mu_values = [...]          # ... or one value per site
# seed = 0
# k_truncation = 15

[chain]
chain_length = 22000
burn_in = 2000
thinning = 1                 # keep every thinning-th post-burn-in draw
h_thinning = 10              # store every h_thinning-th post-burn-in h draw
seed = 0
k_truncation = 15
zero_offset = 1e-8           # added to y^2 before taking logs
# adaptive Metropolis for rho
g0 = 1000                    # iterations with the fixed proposal only
c_init = 0.05
tune_interval = 200          # burn-in iterations between c adjustments
tune_factor = 1.1
target_low = 0.4
target_high = 0.6
max_redraws = 10000          # unstable candidates tolerated per proposal
fixed_var = 0.0033333333333333335
window = "full"              # full | recent_half

[prior]
mu_mean = 0.0
mu_var = 10.0
a = 3.0
b = 2.0

# Needed by `moments`.
# [moments]
# t_len = 3
# rho = [0.3, 0.2, 0.1]
# sigma2 = 0.25
# mu_mean = 0.0              # or mu_values = [...]
# k_truncation = 15
# [[moments.request]]
# order = 2
# site_i = 0
# time_t = 0
# site_j = 1
# time_s = 0
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_matches_defaults() {
        let cfg = RunConfig::from_toml_str(REFERENCE_CONFIG).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.chain.am.fixed_var, 0.01 / 3.0);
    }

    #[test]
    fn empty_config_is_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn missing_scheme_is_named() {
        let e = RunConfig::from_toml_str("[weights]\nrows = 7\ncols = 14\n").unwrap_err();
        assert!(e.to_string().contains("scheme"), "{e}");
        let e = RunConfig::from_toml_str("[weights]\nscheme = \"queen\"\nrows = 7\n").unwrap_err();
        assert!(e.to_string().contains("weights.cols"), "{e}");
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            "[chain]\nchain_lenght = 5\n",
            "[prior]\nmu_varr = 1.0\n",
            "[data]\npanle = \"x\"\n",
            "[simulate]\nt_len = 5\nrho = [0,0,0]\nsigma2 = 1\nmu_mean = 0\nbogus = 1\n",
        ] {
            let e = RunConfig::from_toml_str(text).unwrap_err();
            assert!(e.to_string().contains("unknown field"), "{text}: {e}");
        }
    }

    #[test]
    fn simulate_and_moments_sections() {
        let cfg = RunConfig::from_toml_str(
            r#"
            [simulate]
            t_len = 50
            rho = [0.6, 0.35, -0.025]
            sigma2 = 0.25
            mu_mean = 3.3
            mu_sd = 0.35
            seed = 4

            [moments]
            t_len = 3
            rho = [0.3, 0.2, 0.1]
            sigma2 = 0.25
            mu_values = [0, 0, 0, 1]
            [[moments.request]]
            order = 4
            site_i = 0
            time_t = 1
            site_j = 2
            time_s = 2
            "#,
        )
        .unwrap();
        let s = cfg.require_simulate().unwrap();
        assert_eq!(s.mu_spec().unwrap(), MuSpec::Random { mean: 3.3, sd: 0.35 });
        assert_eq!(s.k_truncation, 15);
        let m = cfg.require_moments().unwrap();
        assert_eq!(m.requests[0], MomentRequest::new(4, (0, 1), (2, 2)));
        assert_eq!(m.mu_vector(4).unwrap()[3], 1.0);
        assert!(m.mu_vector(3).is_err());

        let bad = "[simulate]\nt_len = 5\nrho = [0,0,0]\nsigma2 = 1\nmu_mean = 0\nmu_values = [1]\n";
        assert!(RunConfig::from_toml_str(bad).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let mut a = RunConfig::default();
        let h0 = a.hash().unwrap();
        a.override_seed(9);
        assert_ne!(a.hash().unwrap(), h0);
        let back = RunConfig::from_toml_str(&a.to_toml_string().unwrap()).unwrap();
        assert_eq!(back.hash().unwrap(), a.hash().unwrap());
    }
}
