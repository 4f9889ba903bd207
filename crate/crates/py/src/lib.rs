//! Python bindings: configuration, experiments, runs and the acceptance suite.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use petc_core::harness::acceptance::{reference_config, Suite};
use petc_core::harness::output::summary_text;
use petc_core::harness::{self, Experiment as CoreExperiment, RunConfig as CoreConfig, RunOutput};
use petc_core::triggering::Mode;
use petc_core::Error;

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_mode(s: &str) -> PyResult<Mode> {
    s.parse::<Mode>().map_err(to_py)
}

/// A complete experiment description.
#[pyclass(module = "petc", from_py_object)]
#[derive(Clone)]
struct RunConfig {
    inner: CoreConfig,
}

#[pymethods]
impl RunConfig {
    /// The built-in defaults (a feasible design on the reference plant).
    #[new]
    fn new() -> Self {
        Self { inner: CoreConfig::default() }
    }

    /// The reference study with its reference design values.
    #[staticmethod]
    fn reference() -> Self {
        Self { inner: reference_config() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        CoreConfig::from_toml(text).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        harness::load_config(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn grid(&self) -> usize {
        self.inner.simulation.grid
    }

    #[setter]
    fn set_grid(&mut self, cells: usize) {
        self.inner.simulation.grid = cells;
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.simulation.horizon
    }

    #[setter]
    fn set_horizon(&mut self, t: f64) {
        self.inner.simulation.horizon = t;
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.simulation.mode.to_string()
    }

    #[setter]
    fn set_mode(&mut self, mode: &str) -> PyResult<()> {
        self.inner.simulation.mode = parse_mode(mode)?;
        Ok(())
    }

    #[getter]
    fn kernel_cache(&self) -> Option<PathBuf> {
        self.inner.simulation.kernel_cache.clone()
    }

    #[setter]
    fn set_kernel_cache(&mut self, dir: Option<PathBuf>) {
        self.inner.simulation.kernel_cache = dir;
    }

    fn __repr__(&self) -> String {
        let s = &self.inner.simulation;
        format!("RunConfig(grid={}, horizon={}, mode='{}')", s.grid, s.horizon, s.mode)
    }
}

/// Kernels, gains and constants of one configuration.
#[pyclass(module = "petc", frozen)]
struct Experiment {
    inner: CoreExperiment,
}

#[pymethods]
impl Experiment {
    #[new]
    fn new(py: Python<'_>, config: &RunConfig) -> PyResult<Self> {
        let cfg = config.inner.clone();
        let inner = py.detach(move || CoreExperiment::prepare(&cfg)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.consts.tau
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.consts.gamma
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.grid.dt
    }

    #[getter]
    fn feasible(&self) -> bool {
        self.inner.consts.is_feasible()
    }

    /// The constant chain as `name -> value`.
    fn constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for line in self.inner.consts.report().lines() {
            if let Some((k, v)) = line.split_once(" = ") {
                if let Ok(x) = v.parse::<f64>() {
                    d.set_item(k, x)?;
                }
            }
        }
        Ok(d)
    }

    /// Runs the closed loop; unset arguments come from the configuration.
    #[pyo3(signature = (mode=None, c=None, diagnostics=None, horizon=None))]
    fn run(
        &self,
        py: Python<'_>,
        mode: Option<&str>,
        c: Option<f64>,
        diagnostics: Option<bool>,
        horizon: Option<f64>,
    ) -> PyResult<RunResult> {
        let mut opts = self.inner.default_options();
        if let Some(m) = mode {
            opts.mode = parse_mode(m)?;
        }
        if let Some(c) = c {
            opts.trigger.c = c;
        }
        if let Some(d) = diagnostics {
            opts.diagnostics = d;
        }
        if let Some(h) = horizon {
            opts.horizon = h;
        }
        let out = py.detach(|| self.inner.run(&opts)).map_err(to_py)?;
        Ok(RunResult { out })
    }
}

/// Trace, events and summary of one run.
#[pyclass(module = "petc", frozen)]
struct RunResult {
    out: RunOutput,
}

#[pymethods]
impl RunResult {
    #[getter]
    fn event_count(&self) -> usize {
        self.out.events.len()
    }

    #[getter]
    fn event_times(&self) -> Vec<f64> {
        self.out.events.iter().map(|e| e.t).collect()
    }

    #[getter]
    fn dwell_times(&self) -> Vec<f64> {
        self.out.events.iter().filter_map(|e| e.dwell).collect()
    }

    fn summary(&self) -> String {
        summary_text(&self.out.summary)
    }

    /// Trace columns as lists keyed by the CSV header names.
    fn trace<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let tr = &self.out.trace;
        let col = |f: fn(&harness::TraceRecord) -> f64| tr.iter().map(f).collect::<Vec<f64>>();
        let d = PyDict::new(py);
        d.set_item("t", col(|r| r.t))?;
        d.set_item("y", col(|r| r.y))?;
        d.set_item("U", col(|r| r.u))?;
        d.set_item("Uc", col(|r| r.u_c))?;
        d.set_item("d", col(|r| r.d))?;
        d.set_item("m", col(|r| r.m))?;
        d.set_item("f", col(|r| r.f))?;
        d.set_item("V1", col(|r| r.v1))?;
        d.set_item("Vhat", col(|r| r.v_hat))?;
        d.set_item("W", col(|r| r.w))?;
        d.set_item("barrier", col(|r| r.barrier))?;
        d.set_item("norm_uv", col(|r| r.norm_uv))?;
        d.set_item("norm_err", col(|r| r.norm_err))?;
        d.set_item("event", tr.iter().map(|r| r.event).collect::<Vec<bool>>())?;
        if tr.first().is_some_and(|r| r.v.is_some()) {
            d.set_item("V2", col(|r| r.v2.unwrap_or(f64::NAN)))?;
            d.set_item("V", col(|r| r.v.unwrap_or(f64::NAN)))?;
        }
        Ok(d)
    }

    /// Writes trace, events, summary and constants files into `directory`.
    #[pyo3(signature = (directory, experiment, decimate=1))]
    fn write(&self, directory: PathBuf, experiment: &Experiment, decimate: usize) -> PyResult<()> {
        harness::write_run(&directory, &self.out, &experiment.inner.consts, decimate).map_err(to_py)?;
        Ok(())
    }
}

/// Evaluates acceptance criteria; returns `(id, passed, detail)` tuples.
#[pyfunction]
#[pyo3(signature = (criteria=None, kernel_cache=None))]
fn verify(py: Python<'_>, criteria: Option<Vec<u8>>, kernel_cache: Option<PathBuf>) -> Vec<(u8, bool, String)> {
    py.detach(|| {
        let suite = Suite::new(kernel_cache);
        criteria
            .unwrap_or_else(|| (1..=9).collect())
            .into_iter()
            .map(|id| {
                let r = suite.criterion(id);
                (r.id, r.passed, r.detail)
            })
            .collect()
    })
}

#[pymodule]
fn petc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RunConfig>()?;
    m.add_class::<Experiment>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
