//! Python bindings for `mott_vrh`: exact periodic-environment oracles,
//! Monte Carlo velocity estimates and config-driven runs.

use mott_vrh::cli;
use mott_vrh::config::{EnvConfig, ExperimentConfig};
use mott_vrh::env::{make_periodic, PairPotential, PeriodicEnvironment};
use mott_vrh::kernel::DEFAULT_TAIL_TOL;
use mott_vrh::mc::{estimate_velocities, EnvSource, McSettings};
use mott_vrh::oracle::{build_chain, einstein_check, exact_velocities, stationary, ReversibleChain};
use mott_vrh::Error;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

fn to_py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.exit_code() {
        2 => PyValueError::new_err(msg),
        3 => PyArithmeticError::new_err(msg),
        1 => PyIOError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn value_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(value_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, value_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

/// Serialize a report into plain Python dicts, lists and floats.
/// Non-finite floats serialize as `None`.
fn report<'py, T: Serialize>(py: Python<'py>, r: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(r).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    value_to_py(py, &v)
}

/// Periodic environment with `Z_{k+N} = Z_k`, `E_{k+N} = E_k`.
#[pyclass(name = "PeriodicEnvironment", module = "mottvrh", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyPeriodic {
    inner: PeriodicEnvironment,
}

#[pymethods]
impl PyPeriodic {
    /// `beta = None` gives `u ≡ 0`; otherwise the Mott pair potential at that inverse temperature.
    #[new]
    #[pyo3(signature = (gaps, energies, floor = 1.0, beta = Some(1.0)))]
    fn new(gaps: Vec<f64>, energies: Vec<f64>, floor: f64, beta: Option<f64>) -> PyResult<Self> {
        let pair = beta.map_or(PairPotential::Zero, |beta| PairPotential::Mott { beta });
        make_periodic(gaps, energies, floor, pair).map(|inner| PyPeriodic { inner }).map_err(to_py_err)
    }

    /// One of the periodic presets, e.g. `"period1-lattice"` or `"period4"`.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        EnvConfig::preset(name).periodic().map(|inner| PyPeriodic { inner }).map_err(to_py_err)
    }

    #[getter]
    fn period(&self) -> usize {
        self.inner.period()
    }

    /// Stationary law of the environment chain at bias `lam`, one entry per state.
    #[pyo3(signature = (lam, tail_tol = DEFAULT_TAIL_TOL))]
    fn stationary(&self, lam: f64, tail_tol: f64) -> PyResult<Vec<f64>> {
        build_chain(&self.inner, lam, tail_tol).and_then(|c| stationary(&c)).map(|q| q.iter().copied().collect()).map_err(to_py_err)
    }

    /// Exact discrete- and continuous-time velocities.
    #[pyo3(signature = (lam, tail_tol = DEFAULT_TAIL_TOL))]
    fn velocities<'py>(&self, py: Python<'py>, lam: f64, tail_tol: f64) -> PyResult<Bound<'py, PyAny>> {
        report(py, &exact_velocities(&self.inner, lam, tail_tol).map_err(to_py_err)?)
    }

    /// `(D_Y, D_YY)` at zero bias.
    #[pyo3(signature = (tail_tol = DEFAULT_TAIL_TOL))]
    fn diffusion(&self, tail_tol: f64) -> PyResult<(f64, f64)> {
        ReversibleChain::new(&self.inner, tail_tol).and_then(|r| r.diffusion_spectral()).map_err(to_py_err)
    }

    /// Derivative of `λ ↦ Q_λ(f)` at zero computed two ways, with the CLT covariances.
    /// `f` is centered under the reversible law first.
    #[pyo3(signature = (f, tail_tol = DEFAULT_TAIL_TOL))]
    fn derivative<'py>(&self, py: Python<'py>, f: Vec<f64>, tail_tol: f64) -> PyResult<Bound<'py, PyAny>> {
        let rev = ReversibleChain::new(&self.inner, tail_tol).map_err(to_py_err)?;
        if f.len() != rev.size() {
            return Err(PyValueError::new_err("observable length must equal the period"));
        }
        let f = rev.center(&f);
        report(py, &rev.derivative_two_ways(&f).map_err(to_py_err)?)
    }

    /// Finite-difference mobility against the diffusion coefficient.
    #[pyo3(signature = (h = 1e-3, tail_tol = DEFAULT_TAIL_TOL))]
    fn einstein<'py>(&self, py: Python<'py>, h: f64, tail_tol: f64) -> PyResult<Bound<'py, PyAny>> {
        report(py, &einstein_check(&self.inner, h, tail_tol).map_err(to_py_err)?)
    }

    /// Monte Carlo velocities with batch-means errors.
    #[pyo3(signature = (lam, steps, time, replicas, seed = 0))]
    fn simulate_velocities<'py>(
        &self,
        py: Python<'py>,
        lam: f64,
        steps: u64,
        time: f64,
        replicas: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let src = EnvSource::Periodic(self.inner.clone());
        let s = McSettings { seed, ..Default::default() };
        let r = py.detach(|| estimate_velocities(&src, lam, steps, time, replicas, &s)).map_err(to_py_err)?;
        report(py, &r)
    }

    fn __repr__(&self) -> String {
        format!("PeriodicEnvironment(period={})", self.inner.period())
    }
}

/// Run one experiment from a TOML config. Returns `(exit_code, run_dir, summary)`;
/// failures are reported through the exit code rather than raised.
#[pyfunction]
#[pyo3(signature = (config, threads = 1))]
fn run<'py>(py: Python<'py>, config: &str, threads: usize) -> PyResult<(i32, Option<String>, Bound<'py, PyAny>)> {
    let cfg = ExperimentConfig::from_toml(config).map_err(to_py_err)?;
    let o = py.detach(|| cli::run(&cfg, threads));
    Ok((o.exit_code, o.run_dir.map(|p| p.display().to_string()), value_to_py(py, &o.summary)?))
}

#[pymodule]
pub fn mottvrh(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPeriodic>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("DEFAULT_TAIL_TOL", DEFAULT_TAIL_TOL)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
