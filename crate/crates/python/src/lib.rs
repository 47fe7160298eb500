//! Python bindings for `fermix`.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use fermix::dvr::OrbitalBasis;
use fermix::dynamics::{propagate_with_stats, PropagationStats};
use fermix::fock::{ManyBodyState, Species};
use fermix::hamiltonian::{requench, SparseHamiltonian};
use fermix::harness::{self, ExperimentConfig, Preset, QuenchResult, SweepAxis};
use fermix::observables::{self, ObservableSeries, Pair, SpectrumOptions, Window};
use fermix::singleshot::{self, ImagingOrder, ShotConfig, ShotRecord};

fn to_py(err: fermix::Error) -> PyErr {
    match err {
        fermix::Error::Config(_)
        | fermix::Error::InvalidParameter(_)
        | fermix::Error::DimensionMismatch(_)
        | fermix::Error::Capacity { .. } => PyValueError::new_err(err.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn species(name: &str) -> PyResult<Species> {
    match name {
        "A" | "a" => Ok(Species::A),
        "B" | "b" => Ok(Species::B),
        other => Err(PyValueError::new_err(format!("species must be 'A' or 'B', got {other:?}"))),
    }
}

fn value_text(value: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(b) = value.extract::<bool>() {
        return Ok(b.to_string());
    }
    if let Ok(list) = value.cast::<PyList>() {
        let parts: Vec<String> = list.iter().map(|v| v.str().map(|s| s.to_string())).collect::<PyResult<_>>()?;
        return Ok(parts.join(","));
    }
    Ok(value.str()?.to_string())
}

/// Experiment configuration. Keyword arguments use the config-file keys.
#[pyclass(name = "Config")]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (preset = "paper-sec3", **kwargs))]
    fn new(preset: &str, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let preset: Preset = preset.parse().map_err(to_py)?;
        let mut inner = ExperimentConfig::preset(preset);
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                inner.set(&k.extract::<String>()?, &value_text(&v)?).map_err(to_py)?;
            }
        }
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_config_text(text)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        self.inner.set(key, &value_text(value)?).map_err(to_py)
    }

    fn to_text(&self) -> String {
        self.inner.to_config_text()
    }

    /// Warnings for values outside the usual protocol; raises on invalid ones.
    fn validate(&self) -> PyResult<Vec<String>> {
        self.inner.validate().map_err(to_py)
    }

    /// `(dimension, bytes)` of the largest run this configuration needs.
    fn footprint(&self) -> (usize, usize) {
        self.inner.footprint()
    }

    #[getter]
    fn coupling(&self) -> f64 {
        self.inner.coupling
    }

    #[getter]
    fn particles(&self) -> (usize, usize) {
        (self.inner.n_a, self.inner.n_b)
    }

    #[getter]
    fn orbitals(&self) -> (usize, usize) {
        (self.inner.orbitals_a, self.inner.orbitals_b)
    }

    #[getter]
    fn tilt(&self) -> (f64, f64) {
        (self.inner.d_initial, self.inner.d_final)
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(g={}, N=({}, {}), orbitals=({}, {}), d={}->{}, t_final={})",
            self.inner.coupling,
            self.inner.n_a,
            self.inner.n_b,
            self.inner.orbitals_a,
            self.inner.orbitals_b,
            self.inner.d_initial,
            self.inner.d_final,
            self.inner.propagation.t_final
        )
    }
}

fn series_dict<'py>(py: Python<'py>, s: &ObservableSeries) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t", &s.times)?;
    d.set_item("norm", &s.norm)?;
    if !s.energy.is_empty() {
        d.set_item("energy", &s.energy)?;
    }
    d.set_item("left_pop_A", &s.left_pop_a)?;
    d.set_item("left_pop_B", &s.left_pop_b)?;
    d.set_item("p2_AA", &s.p2_aa)?;
    d.set_item("p2_BB", &s.p2_bb)?;
    d.set_item("p2_AB", &s.p2_ab)?;
    d.set_item("entropy", &s.entropy)?;
    d.set_item("frag_A", &s.frag_a)?;
    d.set_item("frag_B", &s.frag_b)?;
    d.set_item("schmidt", &s.schmidt)?;
    Ok(d)
}

fn stats_dict<'py>(py: Python<'py>, s: &PropagationStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("steps", s.steps)?;
    d.set_item("matvecs", s.matvecs)?;
    d.set_item("smallest_step", s.smallest_step)?;
    d.set_item("largest_step", s.largest_step)?;
    d.set_item("accumulated_error", s.accumulated_error)?;
    Ok(d)
}

fn shot_dict<'py>(py: Python<'py>, r: &ShotRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("time", r.time)?;
    d.set_item("shot", r.shot)?;
    d.set_item("order", r.order.to_string())?;
    d.set_item("positions_A", r.positions(Species::A))?;
    d.set_item("positions_B", r.positions(Species::B))?;
    d.set_item("image_A", r.image(Species::A))?;
    d.set_item("image_B", r.image(Species::B))?;
    Ok(d)
}

/// A many-body state together with the orbitals it is expanded in.
#[pyclass(name = "State")]
struct PyState {
    state: ManyBodyState,
    orbitals_a: Arc<OrbitalBasis>,
    orbitals_b: Arc<OrbitalBasis>,
}

impl PyState {
    fn basis(&self, sp: Species) -> &OrbitalBasis {
        match sp {
            Species::A => &self.orbitals_a,
            Species::B => &self.orbitals_b,
        }
    }
}

#[pymethods]
impl PyState {
    #[getter]
    fn time(&self) -> f64 {
        self.state.time
    }

    #[getter]
    fn dim(&self) -> usize {
        self.state.dim()
    }

    fn norm(&self) -> f64 {
        self.state.norm()
    }

    /// Row-major coefficients over (A configuration, B configuration).
    fn coefficients(&self) -> Vec<num_complex::Complex64> {
        self.state.coeffs.clone()
    }

    fn left_population(&self, species_name: &str) -> PyResult<f64> {
        let sp = species(species_name)?;
        Ok(observables::left_population(&observables::rdm1(&self.state, sp), self.basis(sp)))
    }

    fn pair_probability(&self, pair: &str) -> PyResult<f64> {
        let pair = match pair {
            "AA" => Pair::AA,
            "BB" => Pair::BB,
            "AB" | "BA" => Pair::AB,
            other => return Err(PyValueError::new_err(format!("pair must be AA, BB or AB, got {other:?}"))),
        };
        observables::pair_probability(&self.state, pair, &self.orbitals_a, &self.orbitals_b).map_err(to_py)
    }

    fn schmidt_weights(&self) -> Vec<f64> {
        observables::schmidt_spectrum(&self.state).weights
    }

    fn entropy(&self) -> f64 {
        observables::entropy(&observables::schmidt_spectrum(&self.state))
    }

    fn natural_populations(&self, species_name: &str) -> PyResult<Vec<f64>> {
        Ok(observables::rdm1(&self.state, species(species_name)?).natural_populations())
    }

    fn fragmentation(&self, species_name: &str) -> PyResult<f64> {
        Ok(observables::fragmentation(&observables::rdm1(&self.state, species(species_name)?)))
    }

    /// One-body density at the grid nodes.
    fn density(&self, species_name: &str) -> PyResult<Vec<f64>> {
        let sp = species(species_name)?;
        Ok(observables::rdm1(&self.state, sp).density(self.basis(sp)))
    }

    fn nodes(&self) -> Vec<f64> {
        self.orbitals_a.grid.nodes()
    }

    /// Simulated single-shot images; returns a list of dicts.
    #[pyo3(signature = (n_shots, order = "AB", seed = 0, psf_width = 1.0, workers = 1))]
    fn shots<'py>(
        &self,
        py: Python<'py>,
        n_shots: usize,
        order: &str,
        seed: u64,
        psf_width: f64,
        workers: usize,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let cfg = ShotConfig {
            order: order.parse::<ImagingOrder>().map_err(to_py)?,
            psf_width,
            n_shots,
            seed,
            image_grid: self.orbitals_a.grid.nodes(),
        };
        let records = py
            .detach(|| singleshot::run_shots(&self.state, &self.orbitals_a, &self.orbitals_b, &cfg, workers))
            .map_err(to_py)?;
        records.iter().map(|r| shot_dict(py, r)).collect()
    }
}

/// Orbitals, post-quench Hamiltonian and pre-quench ground state of one
/// configuration.
#[pyclass(name = "System")]
struct PySystem {
    config: ExperimentConfig,
    hamiltonian: SparseHamiltonian,
    ground: ManyBodyState,
    ground_energy: f64,
    orbitals_a: Arc<OrbitalBasis>,
    orbitals_b: Arc<OrbitalBasis>,
}

#[pymethods]
impl PySystem {
    #[new]
    fn new(py: Python<'_>, config: &PyConfig) -> PyResult<Self> {
        let cfg = config.inner.clone();
        cfg.validate().map_err(to_py)?;
        let prep = py.detach(|| harness::prepare(&cfg)).map_err(to_py)?;
        let hamiltonian = requench(&prep.initial, cfg.d_final);
        Ok(Self {
            config: cfg,
            hamiltonian,
            ground_energy: prep.ground.energy,
            ground: prep.ground.state,
            orbitals_a: prep.orbitals_a,
            orbitals_b: prep.orbitals_b,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.hamiltonian.dim_a() * self.hamiltonian.dim_b()
    }

    #[getter]
    fn ground_energy(&self) -> f64 {
        self.ground_energy
    }

    fn ground_state(&self) -> PyState {
        PyState {
            state: self.ground.clone(),
            orbitals_a: self.orbitals_a.clone(),
            orbitals_b: self.orbitals_b.clone(),
        }
    }

    /// Post-quench energy of a state.
    fn energy(&self, state: &PyState) -> f64 {
        self.hamiltonian.expectation(&state.state)
    }

    /// Propagates the ground state after the quench. Returns the observable
    /// series as a dict and the final state.
    #[pyo3(signature = (t_final = None, dt_out = None))]
    fn evolve<'py>(
        &self,
        py: Python<'py>,
        t_final: Option<f64>,
        dt_out: Option<f64>,
    ) -> PyResult<(Bound<'py, PyDict>, PyState, Bound<'py, PyDict>)> {
        let mut cfg = self.config.propagation;
        if let Some(t) = t_final {
            cfg.t_final = t;
        }
        if let Some(dt) = dt_out {
            cfg.dt_out = dt;
        }
        let (oa, ob) = (&self.orbitals_a, &self.orbitals_b);
        let mut series = ObservableSeries::new(self.config.n_a, self.config.n_b);
        let (state, stats) = py
            .detach(|| {
                propagate_with_stats(&self.ground, &self.hamiltonian, &cfg, |s| {
                    series.record(s, oa, ob, None);
                    Ok(())
                })
            })
            .map_err(to_py)?;
        let out = PyState {
            state,
            orbitals_a: oa.clone(),
            orbitals_b: ob.clone(),
        };
        Ok((series_dict(py, &series)?, out, stats_dict(py, &stats)?))
    }
}

/// Outcome of a full quench run.
#[pyclass(name = "QuenchResult")]
struct PyQuenchResult {
    inner: QuenchResult,
}

#[pymethods]
impl PyQuenchResult {
    #[getter]
    fn ground_energy(&self) -> f64 {
        self.inner.ground.energy
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    #[getter]
    fn energy_drift(&self) -> f64 {
        self.inner.relative_energy_drift()
    }

    fn series<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        series_dict(py, &self.inner.series)
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        stats_dict(py, &self.inner.stats)
    }

    /// Shot averages: one dict per imaging time.
    fn shot_averages<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .shots
            .iter()
            .map(|slice| {
                let a = &slice.average;
                let d = PyDict::new(py);
                d.set_item("time", a.time)?;
                d.set_item("n_shots", a.n_shots)?;
                d.set_item("left_fraction_A", a.left_fraction_a)?;
                d.set_item("left_error_A", a.left_error_a)?;
                d.set_item("left_fraction_B", a.left_fraction_b)?;
                d.set_item("left_error_B", a.left_error_b)?;
                d.set_item("mean_image_A", &a.mean_image_a)?;
                d.set_item("mean_image_B", &a.mean_image_b)?;
                Ok(d)
            })
            .collect()
    }

    fn final_state(&self) -> PyState {
        PyState {
            state: self.inner.final_state.clone(),
            orbitals_a: self.inner.orbitals_a.clone(),
            orbitals_b: self.inner.orbitals_b.clone(),
        }
    }
}

/// Ground state, quench and propagation; writes files if `output_dir` is set.
#[pyfunction]
fn run_quench(py: Python<'_>, config: &PyConfig) -> PyResult<PyQuenchResult> {
    let cfg = config.inner.clone();
    let inner = py.detach(|| harness::run_quench(&cfg)).map_err(to_py)?;
    Ok(PyQuenchResult { inner })
}

/// One run per value of `axis`. Skipped runs appear as `(value, None, reason)`.
#[pyfunction]
fn sweep(py: Python<'_>, config: &PyConfig, axis: &str, values: Vec<f64>) -> PyResult<Vec<(f64, Option<PyQuenchResult>, Option<String>)>> {
    let axis: SweepAxis = axis.parse().map_err(to_py)?;
    let cfg = config.inner.clone();
    let runs = py
        .detach(|| harness::sweep_parameters(&cfg, axis, &values))
        .map_err(to_py)?;
    Ok(runs
        .into_iter()
        .map(|run| match run.outcome {
            harness::SweepOutcome::Done(r) => (run.value, Some(PyQuenchResult { inner: *r }), None),
            harness::SweepOutcome::Skipped(why) => (run.value, None, Some(why)),
        })
        .collect())
}

/// Maximum left-population deviations of each orbital count from the largest.
#[pyfunction]
fn convergence<'py>(py: Python<'py>, config: &PyConfig, orbitals: Vec<usize>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.clone();
    let report = py
        .detach(|| harness::convergence_study(&cfg, &orbitals))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("reference", &report.reference)?;
    d.set_item("orbitals", &report.orbital_counts)?;
    d.set_item("max_A", &report.max_a)?;
    d.set_item("max_B", &report.max_b)?;
    d.set_item("trend", report.trend)?;
    Ok(d)
}

/// Cosine transform of a uniformly sampled series.
#[pyfunction]
#[pyo3(signature = (times, values, omega = None, detrend = false, hann = false))]
fn spectrum(times: Vec<f64>, values: Vec<f64>, omega: Option<Vec<f64>>, detrend: bool, hann: bool) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let omega = omega.unwrap_or_else(observables::default_omega_grid);
    let opts = SpectrumOptions {
        detrend,
        window: if hann { Window::Hann } else { Window::None },
    };
    let p = observables::spectrum(&times, &values, &omega, opts).map_err(to_py)?;
    Ok((omega, p))
}

#[pyfunction]
fn effective_coupling(a_s: f64, omega_perp: f64, mu: f64) -> PyResult<f64> {
    fermix::dvr::effective_coupling(a_s, omega_perp, mu).map_err(to_py)
}

#[pymodule]
fn fermix_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", harness::VERSION)?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyState>()?;
    m.add_class::<PySystem>()?;
    m.add_class::<PyQuenchResult>()?;
    m.add_function(wrap_pyfunction!(run_quench, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(convergence, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(effective_coupling, m)?)?;
    Ok(())
}
