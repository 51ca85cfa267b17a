//! Python bindings: schedules, analytic mixtures, trained networks, noise traces, samplers,
//! training, metrics and the oracle battery.
//!
//! Points cross the boundary as lists of lists of floats.

use pyo3::exceptions::{PyRuntimeError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use scorelab::analytic::{self, grid25_means as grid_means};
use scorelab::check::{run_checks as run_battery, CheckOptions};
use scorelab::metrics;
use scorelab::nn::{read_checkpoint, ScoreNet};
use scorelab::noisetrace;
use scorelab::sampler::{run_sampler, InitMode, SampleRunConfig, Variant};
use scorelab::schedule::{self, cas_constants_from_eta};
use scorelab::training::{self, TrainConfig};
use scorelab::{Error, ScoreModel};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Divergence { .. } | Error::TrainingDiverged { .. } | Error::NonFiniteGradient { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Geometric noise levels `sigma_1 > ... > sigma_L`.
#[pyclass(name = "NoiseSchedule", module = "pyscorelab", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Schedule {
    inner: schedule::NoiseSchedule,
}

#[pymethods]
impl Schedule {
    #[new]
    fn new(sigma1: f64, sigma_l: f64, levels: usize) -> PyResult<Self> {
        Ok(Self { inner: schedule::geometric_schedule(sigma1, sigma_l, levels).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn sigmas(&self) -> Vec<f64> {
        self.inner.sigmas().to_vec()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    #[getter]
    fn sigma1(&self) -> f64 {
        self.inner.sigma1()
    }

    #[getter]
    fn sigma_l(&self) -> f64 {
        self.inner.sigma_l()
    }

    /// `sigma_1 / gamma`, the default initial noise scale.
    #[getter]
    fn sigma0(&self) -> f64 {
        self.inner.sigma0()
    }

    #[getter]
    fn sigma_bar(&self) -> f64 {
        self.inner.sigma_bar()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn dilate(&self, n_sigma: usize) -> PyResult<Self> {
        Ok(Self { inner: schedule::dilate(&self.inner, n_sigma).map_err(to_py)? })
    }

    /// `{"epsilon", "eta", "beta"}` of consistent sampling at step size `eta`.
    fn cas_constants<'py>(&self, py: Python<'py>, eta: f64) -> PyResult<Bound<'py, PyDict>> {
        let c = cas_constants_from_eta(&self.inner, eta).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("epsilon", c.epsilon)?;
        d.set_item("eta", c.eta)?;
        d.set_item("beta", c.beta)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "NoiseSchedule(sigma1={}, sigma_l={}, levels={}, gamma={})",
            self.inner.sigma1(),
            self.inner.sigma_l(),
            self.inner.len(),
            self.inner.gamma()
        )
    }
}

/// Isotropic Gaussian mixture with closed-form smoothed scores.
#[pyclass(name = "GaussianMixture", module = "pyscorelab", frozen)]
struct Mixture {
    inner: analytic::GaussianMixture,
}

#[pymethods]
impl Mixture {
    #[new]
    fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, tau2: f64) -> PyResult<Self> {
        Ok(Self { inner: analytic::GaussianMixture::new(weights, means, tau2).map_err(to_py)? })
    }

    #[staticmethod]
    #[pyo3(signature = (spacing = 2.0, tau = 0.05))]
    fn grid25(spacing: f64, tau: f64) -> PyResult<Self> {
        Ok(Self { inner: analytic::GaussianMixture::grid25(spacing, tau).map_err(to_py)? })
    }

    #[staticmethod]
    fn dirac(x0: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: analytic::GaussianMixture::dirac(x0).map_err(to_py)? })
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.inner.means().to_vec()
    }

    #[getter]
    fn tau2(&self) -> f64 {
        self.inner.tau2()
    }

    fn score(&self, x: Vec<f64>, sigma: f64) -> PyResult<Vec<f64>> {
        self.inner.optimal_conditional_score(&x, sigma).map_err(to_py)
    }

    /// Best sigma-free score over `schedule`, so that `s(x) / sigma` is the model.
    fn unconditional_score(&self, x: Vec<f64>, schedule: &Schedule) -> PyResult<Vec<f64>> {
        analytic::optimal_unconditional_score(&self.inner, &x, &schedule.inner).map_err(to_py)
    }

    fn posterior_mean(&self, x: Vec<f64>, sigma: f64) -> PyResult<Vec<f64>> {
        self.inner.posterior_mean(&x, sigma).map_err(to_py)
    }

    fn smoothed_log_density(&self, x: Vec<f64>, sigma: f64) -> PyResult<f64> {
        self.inner.smoothed_log_density(&x, sigma).map_err(to_py)
    }

    fn responsibilities(&self, x: Vec<f64>, sigma: f64) -> PyResult<Vec<f64>> {
        self.inner.responsibilities(&x, sigma).map_err(to_py)
    }
}

/// A trained score network.
#[pyclass(name = "ScoreNetwork", module = "pyscorelab", frozen)]
struct Network {
    inner: ScoreNet,
    schedule: Option<schedule::NoiseSchedule>,
}

#[pymethods]
impl Network {
    /// Loads a checkpoint written by `scorelab train`; the EMA average when present and
    /// `use_ema`.
    #[staticmethod]
    #[pyo3(signature = (path, use_ema = true))]
    fn load(path: std::path::PathBuf, use_ema: bool) -> PyResult<Self> {
        let ckpt = read_checkpoint(&path).map_err(to_py)?;
        let mlp = ckpt.to_mlp(use_ema).map_err(to_py)?;
        Ok(Self {
            inner: ScoreNet::from_mlp(mlp, ckpt.header.conditioning).map_err(to_py)?,
            schedule: ckpt.header.schedule,
        })
    }

    fn score(&self, x: Vec<f64>, sigma: f64) -> PyResult<Vec<f64>> {
        ScoreModel::score(&self.inner, &x, sigma).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn conditional(&self) -> bool {
        self.inner.is_conditional()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.mlp.n_params()
    }

    /// The schedule the network was trained on, when the checkpoint records it.
    #[getter]
    fn schedule(&self) -> Option<Schedule> {
        self.schedule.clone().map(|inner| Schedule { inner })
    }
}

fn as_model<'a>(obj: &'a Bound<'_, PyAny>) -> PyResult<&'a dyn ScoreModel> {
    if let Ok(m) = obj.cast::<Mixture>() {
        return Ok(&m.get().inner);
    }
    if let Ok(n) = obj.cast::<Network>() {
        return Ok(&n.get().inner);
    }
    Err(PyTypeError::new_err("model must be a GaussianMixture or a ScoreNetwork"))
}

#[pyfunction]
#[pyo3(signature = (n, spacing = 2.0, tau = 0.05, seed = 0))]
fn gen_grid25(n: usize, spacing: f64, tau: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(analytic::gen_grid25(n, spacing, tau, seed).map_err(to_py)?.points)
}

#[pyfunction]
#[pyo3(signature = (n, noise = 0.1, seed = 0))]
fn gen_swiss_roll(n: usize, noise: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(analytic::gen_swiss_roll(n, noise, seed).map_err(to_py)?.points)
}

#[pyfunction]
#[pyo3(signature = (spacing = 2.0))]
fn grid25_means(spacing: f64) -> Vec<Vec<f64>> {
    grid_means(spacing)
}

/// Largest pairwise distance in the data, the heuristic first noise level.
#[pyfunction]
fn sigma1_from_data(points: Vec<Vec<f64>>) -> PyResult<f64> {
    schedule::sigma1_from_data(&points).map_err(to_py)
}

type TraceRow = (usize, usize, f64, f64);

fn rows(t: noisetrace::VarianceTrace) -> Vec<TraceRow> {
    t.points.iter().map(|p| (p.step, p.level, p.sigma, p.v)).collect()
}

/// ALS noise trace as `(step, level, sigma, v)` tuples.
#[pyfunction]
#[pyo3(signature = (schedule, eta, n_sigma = 1, v0 = None))]
fn als_trace(schedule: &Schedule, eta: f64, n_sigma: usize, v0: Option<f64>) -> PyResult<Vec<TraceRow>> {
    let v0 = v0.unwrap_or_else(|| schedule.inner.sigma0());
    Ok(rows(noisetrace::als_trace(&schedule.inner, eta, n_sigma, v0).map_err(to_py)?))
}

/// CAS noise trace as `(step, level, sigma, v)` tuples.
#[pyfunction]
fn cas_trace(schedule: &Schedule, eta: f64) -> PyResult<Vec<TraceRow>> {
    Ok(rows(noisetrace::cas_trace(&schedule.inner, eta).map_err(to_py)?))
}

/// `(step, level, sigma_t, v_als, v_cas, diff)` at the end of each level.
#[pyfunction]
#[pyo3(signature = (schedule, eta, n_sigma = 1, v0 = None))]
fn comparison_rows(
    schedule: &Schedule,
    eta: f64,
    n_sigma: usize,
    v0: Option<f64>,
) -> PyResult<Vec<(usize, usize, f64, f64, f64, f64)>> {
    let r = noisetrace::comparison_rows(&schedule.inner, eta, n_sigma, v0).map_err(to_py)?;
    Ok(r.iter().map(|r| (r.step, r.level, r.sigma_t, r.v_als, r.v_cas, r.diff)).collect())
}

#[pyfunction]
fn als_limit(sigma: f64, eta: f64) -> f64 {
    noisetrace::als_limit(sigma, eta)
}

/// Runs ALS or CAS. Give exactly one of `eta` (= epsilon / sigma_L^2) and `epsilon`.
/// Returns `{"samples", "denoised", "sigma0", "levels"}`.
#[pyfunction]
#[pyo3(signature = (
    model, schedule, eta = None, epsilon = None, variant = "cas", n_sigma = 1, chains = 1000,
    seed = 0, denoise_final = true, data = None, sigma0 = None
))]
#[allow(clippy::too_many_arguments)]
fn sample<'py>(
    py: Python<'py>,
    model: &Bound<'py, PyAny>,
    schedule: &Schedule,
    eta: Option<f64>,
    epsilon: Option<f64>,
    variant: &str,
    n_sigma: usize,
    chains: usize,
    seed: u64,
    denoise_final: bool,
    data: Option<Vec<Vec<f64>>>,
    sigma0: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let sl = schedule.inner.sigma_l();
    let epsilon = match (eta, epsilon) {
        (Some(eta), None) => eta * sl * sl,
        (None, Some(eps)) => eps,
        _ => return Err(PyValueError::new_err("give exactly one of eta and epsilon")),
    };
    let variant = match variant {
        "als" => Variant::Als,
        "cas" => Variant::Cas,
        other => return Err(PyValueError::new_err(format!("variant must be 'als' or 'cas', got {other:?}"))),
    };
    let cfg = SampleRunConfig {
        variant,
        epsilon,
        n_sigma,
        denoise_final,
        init: if data.is_some() { InitMode::DataPlusNoise } else { InitMode::PureNoise },
        sigma0,
        chains,
        seed,
    };
    let model = as_model(model)?;
    let sched = &schedule.inner;
    let out = py
        .detach(|| run_sampler(model, sched, &cfg, data.as_deref(), None))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("samples", out.samples)?;
    d.set_item("denoised", out.denoised)?;
    d.set_item("sigma0", out.sigma0)?;
    d.set_item("levels", out.schedule.len())?;
    Ok(d)
}

/// Trains a score network on `data` over `schedule`. `config_json` holds trainer settings
/// (any field of the CLI's `trainer` block); unspecified fields take their defaults.
/// Returns `(network, loss_rows)` with rows `(iteration, dsm, d_loss, g_adv_loss)`.
#[pyfunction]
#[pyo3(signature = (data, schedule, config_json = None))]
#[allow(clippy::type_complexity)]
fn train(
    py: Python<'_>,
    data: Vec<Vec<f64>>,
    schedule: &Schedule,
    config_json: Option<&str>,
) -> PyResult<(Network, Vec<(usize, f64, Option<f64>, Option<f64>)>)> {
    let mut v: serde_json::Value = match config_json {
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => serde_json::json!({}),
    };
    if !v.is_object() {
        return Err(PyValueError::new_err("config_json must be a JSON object"));
    }
    v["schedule"] = serde_json::to_value(&schedule.inner).expect("schedule serializes");
    let cfg: TrainConfig = serde_json::from_value(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let (state, report) = py.detach(|| training::train(&cfg, &data)).map_err(to_py)?;
    let net = state.sampling_net().map_err(to_py)?;
    let losses = report.rows.iter().map(|r| (r.iteration, r.dsm_loss, r.d_loss, r.g_adv_loss)).collect();
    Ok((Network { inner: net, schedule: Some(cfg.schedule) }, losses))
}

/// `{"total_modes", "covered", "kl", "counts", "unassigned", "threshold"}`.
#[pyfunction]
fn mode_coverage<'py>(
    py: Python<'py>,
    samples: Vec<Vec<f64>>,
    centers: Vec<Vec<f64>>,
    threshold: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = metrics::mode_coverage(&samples, &centers, threshold).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("total_modes", r.total_modes)?;
    d.set_item("covered", r.covered)?;
    d.set_item("kl", r.kl)?;
    d.set_item("counts", r.counts)?;
    d.set_item("unassigned", r.unassigned)?;
    d.set_item("threshold", r.threshold)?;
    Ok(d)
}

#[pyfunction]
fn mean_nearest_mode_distance(samples: Vec<Vec<f64>>, centers: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::mean_nearest_mode_distance(&samples, &centers).map_err(to_py)
}

#[pyfunction]
fn energy_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::energy_distance(&a, &b).map_err(to_py)
}

/// The oracle battery; one `(name, passed, measured, tolerance, detail)` tuple per check.
#[pyfunction]
#[pyo3(signature = (seed = 2020, chains = 10000, beta_factor = 1.0))]
fn run_checks(
    py: Python<'_>,
    seed: u64,
    chains: usize,
    beta_factor: f64,
) -> PyResult<Vec<(String, bool, f64, f64, String)>> {
    let report = py
        .detach(|| run_battery(&CheckOptions { seed, chains, beta_factor }))
        .map_err(to_py)?;
    Ok(report.checks.into_iter().map(|c| (c.name, c.passed, c.measured, c.tolerance, c.detail)).collect())
}

#[pymodule]
fn pyscorelab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Schedule>()?;
    m.add_class::<Mixture>()?;
    m.add_class::<Network>()?;
    m.add_function(wrap_pyfunction!(gen_grid25, m)?)?;
    m.add_function(wrap_pyfunction!(gen_swiss_roll, m)?)?;
    m.add_function(wrap_pyfunction!(grid25_means, m)?)?;
    m.add_function(wrap_pyfunction!(sigma1_from_data, m)?)?;
    m.add_function(wrap_pyfunction!(als_trace, m)?)?;
    m.add_function(wrap_pyfunction!(cas_trace, m)?)?;
    m.add_function(wrap_pyfunction!(comparison_rows, m)?)?;
    m.add_function(wrap_pyfunction!(als_limit, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(mode_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(mean_nearest_mode_distance, m)?)?;
    m.add_function(wrap_pyfunction!(energy_distance, m)?)?;
    m.add_function(wrap_pyfunction!(run_checks, m)?)?;
    Ok(())
}
