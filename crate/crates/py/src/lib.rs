use std::f64::consts::FRAC_PI_2;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cct_sets::cct::{fault_setup, verify_classification_from};
use cct_sets::model::{load_scenario, load_scenario_file};
use cct_sets::pipeline::{assemble_all, write_outputs};
use cct_sets::{Bounds, Error, OptimizeOptions, PipelineOptions, Point};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Parse { .. } | Error::Validation(_) | Error::Unsupported(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Scenario", module = "cct_sets_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: cct_sets::Scenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(PyScenario {
            inner: load_scenario_file(&path).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyScenario {
            inner: load_scenario(text).map_err(py_err)?,
        })
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        (0..self.inner.m()).map(|i| self.inner.name(i)).collect()
    }

    #[getter]
    fn bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.inner
            .bounds
            .as_ref()
            .map(|b| (b.lower.clone(), b.upper.clone()))
    }

    /// Copy of the scenario with new angle bounds.
    fn with_bounds(&self, lower: Vec<f64>, upper: Vec<f64>) -> PyResult<Self> {
        let b = Bounds::new(lower, upper).map_err(py_err)?;
        if b.m() != self.inner.m() {
            return Err(PyValueError::new_err(
                "bounds do not match the machine count",
            ));
        }
        let mut inner = self.inner.clone();
        inner.bounds = Some(b);
        Ok(PyScenario { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn __repr__(&self) -> String {
        format!("Scenario(m={})", self.inner.m())
    }
}

#[pyclass(name = "SafetySet", module = "cct_sets_py", frozen)]
struct PySafetySet {
    inner: cct_sets::SafetySet,
}

#[pymethods]
impl PySafetySet {
    #[getter]
    fn machine(&self) -> usize {
        self.inner.machine
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.label()
    }

    #[getter]
    fn empty(&self) -> bool {
        self.inner.empty
    }

    #[getter]
    fn area(&self) -> f64 {
        self.inner.area()
    }

    #[getter]
    fn tol_band(&self) -> f64 {
        self.inner.tol_band
    }

    #[getter]
    fn z2_cap(&self) -> f64 {
        self.inner.z2_cap
    }

    /// Boundary rings as lists of `(z1, z2)` vertices.
    #[getter]
    fn rings(&self) -> Vec<Vec<(f64, f64)>> {
        self.inner
            .rings
            .iter()
            .map(|r| r.iter().map(|p| (p.z1, p.z2)).collect())
            .collect()
    }

    fn contains(&self, z1: f64, z2: f64) -> bool {
        self.inner.contains(Point::new(z1, z2))
    }

    fn __repr__(&self) -> String {
        format!(
            "SafetySet(machine={}, kind={}, empty={}, area={:.6})",
            self.inner.machine,
            self.inner.kind.label(),
            self.inner.empty,
            self.inner.area()
        )
    }
}

#[pyclass(name = "Report", module = "cct_sets_py", frozen)]
struct PyReport {
    inner: cct_sets::AnalysisReport,
    names: Vec<String>,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn summary(&self) -> String {
        self.inner.summary.clone()
    }

    #[getter]
    fn t_safe(&self) -> f64 {
        self.inner.cct.t_safe
    }

    #[getter]
    fn t_unsafe(&self) -> f64 {
        self.inner.cct.t_unsafe
    }

    #[getter]
    fn critical(&self) -> Vec<String> {
        self.inner
            .cct
            .critical()
            .iter()
            .map(|&i| self.names[i].clone())
            .collect()
    }

    #[getter]
    fn classification(&self) -> Option<&'static str> {
        self.inner.classification.map(|c| c.label())
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    /// `(t_mrpi, t_admissible)` per machine.
    #[getter]
    fn crossings(&self) -> Vec<(f64, f64)> {
        self.inner
            .cct
            .crossings
            .iter()
            .map(|c| (c.t_mrpi, c.t_admissible))
            .collect()
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn __repr__(&self) -> String {
        format!("Report({})", self.inner.summary)
    }
}

#[pyfunction]
#[pyo3(signature = (scenario, gamma = FRAC_PI_2))]
fn certify<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    gamma: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut warnings = Vec::new();
    let c =
        cct_sets::pipeline::certify(&scenario.inner, gamma, true, &mut warnings).map_err(py_err)?;
    let out = PyDict::new(py);
    for (label, cert) in [("pre", &c.pre), ("post", &c.post)] {
        let d = PyDict::new(py);
        d.set_item("lhs", cert.lhs)?;
        d.set_item("rhs", cert.rhs)?;
        d.set_item("passed", cert.passed)?;
        d.set_item("margin", cert.margin)?;
        out.set_item(label, d)?;
    }
    Ok(out)
}

#[pyfunction]
fn equilibria<'py>(py: Python<'py>, scenario: &PyScenario) -> PyResult<Bound<'py, PyDict>> {
    let s = fault_setup(&scenario.inner).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("omega_pre", s.omega_pre)?;
    out.set_item("omega_fault", s.omega_fault)?;
    out.set_item("omega_post", s.omega_post)?;
    out.set_item("pre", s.pre.angles)?;
    out.set_item("post", s.post.angles)?;
    Ok(out)
}

/// `(admissible, mrpi)` for every machine.
#[pyfunction]
fn assemble_sets(scenario: &PyScenario) -> PyResult<Vec<(PySafetySet, PySafetySet)>> {
    let sc = &scenario.inner;
    let bounds = sc
        .bounds
        .clone()
        .ok_or_else(|| PyValueError::new_err("scenario has no bounds"))?;
    let setup = fault_setup(sc).map_err(py_err)?;
    let sets = assemble_all(sc, &setup, &bounds).map_err(py_err)?;
    Ok(sets
        .into_iter()
        .map(|(a, m)| (PySafetySet { inner: a }, PySafetySet { inner: m }))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (scenario, t_clear = None, gamma = FRAC_PI_2, force = false, horizon = None, out_dir = None))]
fn analyze(
    py: Python<'_>,
    scenario: &PyScenario,
    t_clear: Option<f64>,
    gamma: f64,
    force: bool,
    horizon: Option<f64>,
    out_dir: Option<PathBuf>,
) -> PyResult<PyReport> {
    let opts = PipelineOptions {
        gamma,
        t_clear,
        force,
        horizon,
        ..Default::default()
    };
    let sc = scenario.inner.clone();
    let a = py
        .detach(|| cct_sets::run_analysis(sc, &opts))
        .map_err(py_err)?;
    if let Some(dir) = out_dir {
        write_outputs(&a, &dir).map_err(py_err)?;
    }
    let names = (0..a.scenario.m()).map(|i| a.scenario.name(i)).collect();
    Ok(PyReport {
        inner: a.report,
        names,
    })
}

#[pyfunction]
#[pyo3(signature = (scenario, budget, seed = 0, margin = 0.3, weights = None))]
fn optimize_bounds<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    budget: usize,
    seed: u64,
    margin: f64,
    weights: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = OptimizeOptions {
        margin,
        weights,
        ..Default::default()
    };
    let sc = scenario.inner.clone();
    let r = py
        .detach(|| cct_sets::optimize_bounds(&sc, budget, seed, &opts))
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("lower", r.best.bounds.lower.clone())?;
    out.set_item("upper", r.best.bounds.upper.clone())?;
    out.set_item("objective", r.best.objective)?;
    out.set_item("areas", r.best.areas.clone())?;
    out.set_item("evaluations", r.evaluations)?;
    out.set_item("best_trace", r.best_trace.clone())?;
    out.set_item("history_csv", r.history_csv())?;
    Ok(out)
}

/// Fault-on run to `t_clear`, then the post-fault run for `horizon` seconds.
#[pyfunction]
#[pyo3(signature = (scenario, t_clear, horizon = 20.0))]
fn simulate<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    t_clear: f64,
    horizon: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let setup = fault_setup(&scenario.inner).map_err(py_err)?;
    let v =
        verify_classification_from(&scenario.inner, &setup, t_clear, horizon).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("in_slab", v.in_slab)?;
    out.set_item("exit_machine", v.exit.map(|e| e.0))?;
    out.set_item("exit_time", v.exit.map(|e| e.1))?;
    out.set_item("clearing_state", v.clearing_state)?;
    out.set_item("final_state", v.final_state)?;
    Ok(out)
}

#[pymodule]
fn cct_sets_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", cct_sets::VERSION)?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PySafetySet>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(equilibria, m)?)?;
    m.add_function(wrap_pyfunction!(assemble_sets, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
