//! Python bindings: weights, stability, simulation, moments and the Gibbs
//! sampler. Matrices cross the boundary as lists of rows (`n` rows of `T`
//! values for panels); summaries come back as plain dicts.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde_json::Value;

use stsv_core::dgp::{self, MuSpec, SimulationConfig};
use stsv_core::gibbs::{run_chains, PriorSpec, PosteriorSummary};
use stsv_core::io::config::RunConfig;
use stsv_core::moments::{self, MomentRequest};
use stsv_core::spacetime::{self, SpaceTimeSystem, SpilloverParams, DEFAULT_K_TRUNCATION};
use stsv_core::weights::{Contiguity, WeightsMatrix};
use stsv_core::{mixture, Error};

fn to_py(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn rho_of(rho: (f64, f64, f64)) -> SpilloverParams {
    SpilloverParams::new(rho.0, rho.1, rho.2)
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let t = rows.first().map_or(0, Vec::len);
    if n == 0 || t == 0 || rows.iter().any(|r| r.len() != t) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok(DMatrix::from_fn(n, t, |i, j| rows[i][j]))
}

fn json_to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Spatial weights matrix.
#[pyclass(name = "Weights", module = "stsv", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyWeights {
    inner: WeightsMatrix,
}

#[pymethods]
impl PyWeights {
    /// Rook or queen contiguity on a `rows x cols` lattice.
    #[staticmethod]
    #[pyo3(signature = (rows, cols, scheme = "queen", permutation_seed = None, normalize = true))]
    fn lattice(
        rows: usize,
        cols: usize,
        scheme: &str,
        permutation_seed: Option<u64>,
        normalize: bool,
    ) -> PyResult<Self> {
        let scheme: Contiguity = scheme.parse().map_err(to_py)?;
        let w = WeightsMatrix::lattice(rows, cols, scheme, permutation_seed).map_err(to_py)?;
        Ok(PyWeights {
            inner: if normalize { w.row_normalize() } else { w },
        })
    }

    /// Sites within `threshold_miles` (great-circle) of each other.
    #[staticmethod]
    #[pyo3(signature = (coords, threshold_miles, normalize = true))]
    fn distance(coords: Vec<(f64, f64)>, threshold_miles: f64, normalize: bool) -> PyResult<Self> {
        let w = WeightsMatrix::distance_contiguity(&coords, threshold_miles).map_err(to_py)?;
        Ok(PyWeights {
            inner: if normalize { w.row_normalize() } else { w },
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n, triplets, row_normalized = false))]
    fn from_triplets(n: usize, triplets: Vec<(usize, usize, f64)>, row_normalized: bool) -> PyResult<Self> {
        Ok(PyWeights {
            inner: WeightsMatrix::from_triplets(n, triplets, row_normalized).map_err(to_py)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn row_normalized(&self) -> bool {
        self.inner.is_row_normalized()
    }

    #[getter]
    fn mean_neighbors(&self) -> f64 {
        self.inner.mean_neighbors()
    }

    #[getter]
    fn sparsity_percent(&self) -> f64 {
        self.inner.sparsity_percent()
    }

    fn row_normalize(&self) -> Self {
        PyWeights {
            inner: self.inner.row_normalize(),
        }
    }

    fn isolated_sites(&self) -> Vec<usize> {
        self.inner.isolated_sites()
    }

    fn triplets(&self) -> Vec<(usize, usize, f64)> {
        self.inner.triplets().collect()
    }

    fn to_dense(&self) -> Vec<Vec<f64>> {
        rows_of(&self.inner.to_dense())
    }

    fn spectral_radius(&self) -> PyResult<f64> {
        self.inner.spectral_radius().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Weights(n={}, nnz={}, row_normalized={})",
            self.inner.n(),
            self.inner.nnz(),
            self.inner.is_row_normalized()
        )
    }
}

/// Stationarity check; returns a dict with `stable` and the two spectral
/// radii.
#[pyfunction]
fn check_stability(py: Python<'_>, rho: (f64, f64, f64), w: &PyWeights) -> PyResult<Py<PyAny>> {
    let r = spacetime::check_stability(&rho_of(rho), &w.inner).map_err(to_py)?;
    let v = serde_json::json!({
        "stable": r.stable,
        "spatial_radius": r.spatial_radius,
        "transition_radius": r.transition_radius,
    });
    json_to_py(py, &v)
}

/// Dense `Omega^-1` (precision of the stacked `h`), `nT x nT`.
#[pyfunction]
#[pyo3(signature = (rho, sigma2, w, t_len, k_truncation = DEFAULT_K_TRUNCATION))]
fn precision_matrix(
    rho: (f64, f64, f64),
    sigma2: f64,
    w: &PyWeights,
    t_len: usize,
    k_truncation: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let sys = SpaceTimeSystem::new(rho_of(rho), &w.inner, k_truncation).map_err(to_py)?;
    let blocks = sys.precision_blocks(sigma2, t_len).map_err(to_py)?;
    Ok(rows_of(&blocks.to_dense()))
}

#[pyfunction]
fn mixture_density(v: f64) -> f64 {
    mixture::mixture_density(v)
}

#[pyfunction]
fn mixture_mean() -> f64 {
    mixture::mixture_mean()
}

#[pyfunction]
fn mixture_variance() -> f64 {
    mixture::mixture_variance()
}

#[pyfunction]
fn gamma_factor(r: u32) -> PyResult<f64> {
    moments::gamma_factor(r).map_err(to_py)
}

/// Simulates `y` and `h` (`n` rows of `T`); site effects come from `mu`
/// when given, otherwise from `N(mu_mean, mu_sd^2)`.
#[pyfunction]
#[pyo3(signature = (w, t_len, rho, sigma2, mu = None, mu_mean = 0.0, mu_sd = 0.0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    w: &PyWeights,
    t_len: usize,
    rho: (f64, f64, f64),
    sigma2: f64,
    mu: Option<Vec<f64>>,
    mu_mean: f64,
    mu_sd: f64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let spec = match mu {
        Some(v) => MuSpec::Explicit(v),
        None => MuSpec::Random {
            mean: mu_mean,
            sd: mu_sd,
        },
    };
    let cfg = SimulationConfig::new(w.inner.clone(), t_len, rho_of(rho), sigma2, spec).with_seed(seed);
    let p = py.detach(|| dgp::simulate(&cfg)).map_err(to_py)?;
    let v = serde_json::json!({
        "y": rows_of(&p.y),
        "h": rows_of(&p.h),
        "mu": p.mu.as_slice(),
    });
    json_to_py(py, &v)
}

/// Closed-form moments of `y` for fixed parameters.
#[pyclass(name = "MomentModel", module = "stsv", frozen)]
struct PyMomentModel {
    inner: moments::MomentModel,
}

#[pymethods]
impl PyMomentModel {
    #[new]
    #[pyo3(signature = (rho, mu, sigma2, w, t_len, k_truncation = DEFAULT_K_TRUNCATION))]
    fn new(
        rho: (f64, f64, f64),
        mu: Vec<f64>,
        sigma2: f64,
        w: &PyWeights,
        t_len: usize,
        k_truncation: usize,
    ) -> PyResult<Self> {
        let inner = moments::MomentModel::new(
            rho_of(rho),
            DVector::from_vec(mu),
            sigma2,
            &w.inner,
            t_len,
            k_truncation,
        )
        .map_err(to_py)?;
        Ok(PyMomentModel { inner })
    }

    /// `Cov(h_it, h_js)`.
    fn omega(&self, i: usize, t: usize, j: usize, s: usize) -> PyResult<f64> {
        self.inner.omega((i, t), (j, s)).map_err(to_py)
    }

    /// `E(y_it^r)` for even `r`.
    fn moment(&self, r: u32, i: usize, t: usize) -> PyResult<f64> {
        self.inner.moment(r, i, t).map_err(to_py)
    }

    fn excess_kurtosis(&self, i: usize, t: usize) -> PyResult<f64> {
        self.inner.excess_kurtosis(i, t).map_err(to_py)
    }

    /// `Cov(y_it^r, y_js^r)`.
    fn cross_covariance(&self, r: u32, i: usize, t: usize, j: usize, s: usize) -> PyResult<f64> {
        self.inner
            .cross_covariance(&MomentRequest::new(r, (i, t), (j, s)))
            .map_err(to_py)
    }
}

/// Runs the Gibbs sampler on `y` (`n` rows of `T`) and returns the pooled
/// posterior summary as a dict.
///
/// `config` is an optional TOML string with `[chain]` and `[prior]`
/// sections (same keys as the command-line configuration).
#[pyfunction]
#[pyo3(signature = (y, w, config = None, chains = 1, seed = None))]
fn estimate(
    py: Python<'_>,
    y: Vec<Vec<f64>>,
    w: &PyWeights,
    config: Option<&str>,
    chains: usize,
    seed: Option<u64>,
) -> PyResult<Py<PyAny>> {
    let y = matrix_of(&y)?;
    let mut cfg = match config {
        Some(text) => RunConfig::from_toml_str(text).map_err(to_py)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.chain.seed = s;
    }
    let prior: PriorSpec = cfg.prior.to_prior(y.nrows()).map_err(to_py)?;
    let wm = w.inner.clone();
    let summary = py
        .detach(|| {
            let draws = run_chains(&y, &wm, &prior, &cfg.chain, chains)?;
            PosteriorSummary::from_chains(&draws)
        })
        .map_err(to_py)?;
    let v = serde_json::to_value(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

#[pymodule(name = "stsv")]
fn stsv_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWeights>()?;
    m.add_class::<PyMomentModel>()?;
    m.add_function(wrap_pyfunction!(check_stability, m)?)?;
    m.add_function(wrap_pyfunction!(precision_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(mixture_density, m)?)?;
    m.add_function(wrap_pyfunction!(mixture_mean, m)?)?;
    m.add_function(wrap_pyfunction!(mixture_variance, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_factor, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    Ok(())
}
