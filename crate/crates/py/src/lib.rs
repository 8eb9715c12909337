//! Python bindings for `netcbf`.
//!
//! Vectors cross the boundary as lists of floats; reports come back as plain
//! dicts decoded from their JSON form.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use netcbf::analysis::{verify_bounds, AnalysisSettings};
use netcbf::config::{parse_toml, preset_names, ExperimentConfig};
use netcbf::estimation::{DirtyDerivative, EstimatorKind};
use netcbf::filter::static_filter;
use netcbf::grid::{epsilon_sweep, GridOverrides};
use netcbf::qp::{qp_oracle, QpMethod};
use netcbf::runner::{execute, Command, RunOptions};
use netcbf::scenario::{ieee14, toy_scalar, ScenarioConfig, ToyParams};
use netcbf::sim::{simulate_dynamic, simulate_nominal, simulate_static, SimConfig, Trajectory};
use netcbf::{Error, Matrix, Norm, Vector};

create_exception!(
    pynetcbf,
    HypothesisNotMet,
    PyRuntimeError,
    "A bound's hypothesis does not hold."
);
create_exception!(
    pynetcbf,
    NumericalError,
    PyRuntimeError,
    "Simulation or analysis failed numerically."
);

fn to_py(err: Error) -> PyErr {
    match err {
        Error::HypothesisNotMet(msg) => HypothesisNotMet::new_err(msg),
        e @ (Error::NumericalBlowup { .. }
        | Error::DomainExit { .. }
        | Error::Numerical(_)
        | Error::WellPosedness { .. }
        | Error::Infeasible { .. }) => NumericalError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn parse_norm(norm: &str) -> PyResult<Norm> {
    norm.parse().map_err(|e: Error| to_py(e))
}

fn estimator(kind: &str, tau_d: f64, offset: f64) -> PyResult<EstimatorKind> {
    let est = match kind {
        "exact" => EstimatorKind::Exact,
        "dirty" => EstimatorKind::Dirty { tau_d },
        "biased" => EstimatorKind::Biased { offset },
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown estimator `{other}`; expected exact, dirty or biased"
            )))
        }
    };
    est.validate().map_err(to_py)?;
    Ok(est)
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn rows(vs: &[Vector]) -> Vec<Vec<f64>> {
    vs.iter().map(|v| v.iter().copied().collect()).collect()
}

/// Logarithmic norm of a square matrix given as a list of rows.
#[pyfunction]
#[pyo3(signature = (matrix, norm = "two"))]
fn log_norm(matrix: Vec<Vec<f64>>, norm: &str) -> PyResult<f64> {
    let n = matrix.len();
    if n == 0 || matrix.iter().any(|r| r.len() != matrix[0].len()) {
        return Err(PyValueError::new_err(
            "matrix must be a non-empty list of equal-length rows",
        ));
    }
    let m = Matrix::from_fn(n, matrix[0].len(), |i, j| matrix[i][j]);
    netcbf::norms::log_norm(&m, parse_norm(norm)?).map_err(to_py)
}

/// Names of the shipped experiment presets.
#[pyfunction]
fn presets() -> Vec<&'static str> {
    preset_names()
}

/// Runs a CLI command (`run`, `sweep` or `verify`) on a TOML config string.
/// Returns the exit code, output directory and manifest.
#[pyfunction]
#[pyo3(signature = (config_toml, command = "run", out = None, seed = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config_toml: &str,
    command: &str,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let cmd = match command {
        "run" => Command::Run,
        "sweep" => Command::Sweep,
        "verify" => Command::Verify,
        other => return Err(PyValueError::new_err(format!("unknown command `{other}`"))),
    };
    let cfg = ExperimentConfig::from_toml_str(config_toml).map_err(to_py)?;
    let outcome = py
        .detach(|| {
            execute(
                cmd,
                cfg,
                &RunOptions {
                    out,
                    jobs: None,
                    seed,
                },
            )
        })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("exit_code", outcome.exit_code)?;
    d.set_item("out_dir", outcome.out_dir.to_string_lossy().into_owned())?;
    d.set_item("messages", outcome.messages)?;
    let manifest = serde_json::to_string(&outcome.manifest).expect("manifest serializes");
    d.set_item("manifest", json_to_py(py, &manifest)?)?;
    Ok(d)
}

/// Recorded simulation run.
#[pyclass(name = "Trajectory", frozen)]
struct PyTrajectory {
    inner: Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn kind(&self) -> String {
        format!("{:?}", self.inner.kind).to_lowercase()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    #[getter]
    fn states(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.states)
    }

    #[getter]
    fn fast(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.fast.as_deref().map(rows)
    }

    #[getter]
    fn corrections(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.corrections)
    }

    #[getter]
    fn static_ref(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.static_ref.as_deref().map(rows)
    }

    #[getter]
    fn active(&self) -> Vec<bool> {
        self.inner.active.clone()
    }

    #[getter]
    fn error_norms(&self) -> Vec<f64> {
        self.inner.error_norms.clone()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(kind={}, samples={}, dt={})",
            self.kind(),
            self.inner.len(),
            self.inner.dt
        )
    }
}

/// Plant, barrier constraints, disturbance and initial state.
#[pyclass(name = "Scenario", frozen)]
struct PyScenario {
    inner: netcbf::scenario::Scenario,
}

impl PyScenario {
    fn vector(&self, v: Vec<f64>, what: &str, len: usize) -> PyResult<Vector> {
        if v.len() != len {
            return Err(PyValueError::new_err(format!(
                "{what} needs {len} entries, got {}",
                v.len()
            )));
        }
        Ok(Vector::from_vec(v))
    }

    fn state(&self, x: Vec<f64>) -> PyResult<Vector> {
        self.vector(x, "state", self.inner.model.state_dim())
    }

    fn disturbance_at(&self, w: Option<Vec<f64>>, t: f64) -> PyResult<Vector> {
        match w {
            Some(w) => self.vector(w, "disturbance", self.inner.model.state_dim()),
            None => Ok(self.inner.disturbance.eval(t)),
        }
    }
}

#[pymethods]
impl PyScenario {
    /// Scalar toy plant `x' = -x + u + w` with `w = -2`, `h = x`, `alpha = 3`.
    #[staticmethod]
    fn toy_scalar() -> PyResult<Self> {
        Ok(Self {
            inner: toy_scalar(&ToyParams::default()).map_err(to_py)?,
        })
    }

    /// IEEE 14-bus case.
    #[staticmethod]
    #[pyo3(signature = (step_pu = 3.0, filter_all_buses = false))]
    fn ieee14(step_pu: f64, filter_all_buses: bool) -> PyResult<Self> {
        let ov = GridOverrides {
            step_pu: Some(step_pu),
            filter_all_buses: Some(filter_all_buses),
            ..Default::default()
        };
        Ok(Self {
            inner: ieee14(&ov).map_err(to_py)?,
        })
    }

    /// Scenario section of a shipped preset.
    #[staticmethod]
    fn from_preset(name: &str) -> PyResult<Self> {
        let cfg = ExperimentConfig::preset(name).map_err(to_py)?;
        Ok(Self {
            inner: cfg.build_scenario().map_err(to_py)?,
        })
    }

    /// Scenario from a TOML table such as `kind = "custom-network"` plus
    /// `[network]`.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let cfg: ScenarioConfig = parse_toml(text).map_err(to_py)?;
        Ok(Self {
            inner: cfg.build().map_err(to_py)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.model.state_dim()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.model.input_dim()
    }

    #[getter]
    fn x0(&self) -> Vec<f64> {
        self.inner.x0.iter().copied().collect()
    }

    /// Disturbance value at time `t`.
    fn disturbance(&self, t: f64) -> Vec<f64> {
        self.inner.disturbance.eval(t).iter().copied().collect()
    }

    /// Closed-form filter `s(x)`; `w` defaults to the disturbance at `t`.
    #[pyo3(signature = (x, w = None, t = 0.0))]
    fn static_filter(&self, x: Vec<f64>, w: Option<Vec<f64>>, t: f64) -> PyResult<Vec<f64>> {
        let x = self.state(x)?;
        let w = self.disturbance_at(w, t)?;
        let f = static_filter(&self.inner.spec, &self.inner.model, &x, &w).map_err(to_py)?;
        Ok(f.s.iter().copied().collect())
    }

    /// Numerical QP solution, for comparison with `static_filter`.
    #[pyo3(signature = (x, w = None, t = 0.0))]
    fn qp_oracle(&self, x: Vec<f64>, w: Option<Vec<f64>>, t: f64) -> PyResult<Vec<f64>> {
        let x = self.state(x)?;
        let w = self.disturbance_at(w, t)?;
        let s = qp_oracle(
            &self.inner.spec,
            &self.inner.model,
            &x,
            &w,
            QpMethod::ProjectedGradient,
        )
        .map_err(to_py)?;
        Ok(s.iter().copied().collect())
    }

    /// Simulates with `mode` in `none`, `static` or `dynamic`.
    #[pyo3(signature = (
        mode = "dynamic", epsilon = 0.1, dt = 1e-3, horizon = 10.0,
        estimator = "exact", tau_d = 0.01, offset = 0.0, norm = "two", x0 = None
    ))]
    #[allow(clippy::too_many_arguments)]
    fn simulate(
        &self,
        py: Python<'_>,
        mode: &str,
        epsilon: f64,
        dt: f64,
        horizon: f64,
        estimator: &str,
        tau_d: f64,
        offset: f64,
        norm: &str,
        x0: Option<Vec<f64>>,
    ) -> PyResult<PyTrajectory> {
        let x0 = match x0 {
            Some(x) => self.state(x)?,
            None => self.inner.x0.clone(),
        };
        let cfg = SimConfig::new(x0, dt, horizon)
            .with_epsilon(epsilon)
            .with_estimator(self::estimator(estimator, tau_d, offset)?)
            .with_norm(parse_norm(norm)?);
        let sc = &self.inner;
        let traj = py
            .detach(|| match mode {
                "none" | "nominal" => simulate_nominal(&sc.model, &sc.disturbance, &cfg),
                "static" => simulate_static(&sc.model, &sc.spec, &sc.disturbance, &cfg),
                "dynamic" => simulate_dynamic(&sc.model, &sc.spec, &sc.disturbance, &cfg),
                other => Err(Error::InvalidArgument(format!("unknown mode `{other}`"))),
            })
            .map_err(to_py)?;
        Ok(PyTrajectory { inner: traj })
    }

    /// Violation series (Hz for the grid case) as a dict with `max`,
    /// `argmax_time` and `values`.
    fn violation<'py>(&self, py: Python<'py>, traj: &PyTrajectory) -> PyResult<Bound<'py, PyDict>> {
        let v = self.inner.violation(&traj.inner);
        let d = PyDict::new(py);
        d.set_item("max", v.max)?;
        d.set_item("argmax_time", v.argmax_time)?;
        d.set_item("support", v.support_duration(traj.inner.dt))?;
        d.set_item("values", v.values)?;
        Ok(d)
    }

    /// Static and dynamic runs plus both bound checks. Returns the JSON
    /// summary as a dict.
    #[pyo3(signature = (epsilon = 0.1, dt = 1e-3, horizon = 10.0, seed = 0, norm = "two", estimator = "exact", tau_d = 0.01, offset = 0.0))]
    #[allow(clippy::too_many_arguments)]
    fn verify_bounds<'py>(
        &self,
        py: Python<'py>,
        epsilon: f64,
        dt: f64,
        horizon: f64,
        seed: u64,
        norm: &str,
        estimator: &str,
        tau_d: f64,
        offset: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg = SimConfig::new(self.inner.x0.clone(), dt, horizon)
            .with_epsilon(epsilon)
            .with_estimator(self::estimator(estimator, tau_d, offset)?)
            .with_norm(parse_norm(norm)?);
        let sc = &self.inner;
        let out = py
            .detach(|| {
                verify_bounds(
                    &sc.model,
                    &sc.spec,
                    &sc.disturbance,
                    &cfg,
                    &AnalysisSettings::new(seed),
                )
            })
            .map_err(to_py)?;
        json_to_py(py, &out.summary_json())
    }

    /// Dynamic runs over `epsilons`; one dict per cell.
    #[pyo3(signature = (epsilons, dt = 1e-3, horizon = 10.0, estimator = "dirty", tau_d = 0.01))]
    fn epsilon_sweep<'py>(
        &self,
        py: Python<'py>,
        epsilons: Vec<f64>,
        dt: f64,
        horizon: f64,
        estimator: &str,
        tau_d: f64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let base = SimConfig::new(self.inner.x0.clone(), dt, horizon)
            .with_estimator(self::estimator(estimator, tau_d, 0.0)?);
        let sc = &self.inner;
        let result = py.detach(|| {
            epsilon_sweep(
                &sc.model,
                &sc.spec,
                &sc.disturbance,
                &base,
                &epsilons,
                |traj| sc.violation(traj),
            )
        });
        result
            .cells
            .iter()
            .map(|cell| {
                let d = PyDict::new(py);
                d.set_item("epsilon", cell.epsilon)?;
                match &cell.outcome {
                    Ok(series) => {
                        d.set_item("max_violation", series.max)?;
                        d.set_item("support", series.support_duration(result.dt))?;
                        d.set_item("error", py.None())?;
                    }
                    Err(reason) => {
                        d.set_item("max_violation", py.None())?;
                        d.set_item("support", py.None())?;
                        d.set_item("error", reason)?;
                    }
                }
                Ok(d)
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={}, state_dim={}, input_dim={})",
            self.inner.name,
            self.inner.model.state_dim(),
            self.inner.model.input_dim()
        )
    }
}

/// First-order dirty-derivative estimator.
#[pyclass(name = "DirtyDerivative")]
struct PyDirtyDerivative {
    inner: DirtyDerivative,
}

#[pymethods]
impl PyDirtyDerivative {
    #[new]
    fn new(x0: Vec<f64>, tau_d: f64) -> PyResult<Self> {
        Ok(Self {
            inner: DirtyDerivative::new(&Vector::from_vec(x0), tau_d).map_err(to_py)?,
        })
    }

    /// Returns the estimate for sample `x`, then advances the filter by `dt`.
    fn step(&mut self, x: Vec<f64>, dt: f64) -> PyResult<Vec<f64>> {
        let est = self.inner.step(&Vector::from_vec(x), dt).map_err(to_py)?;
        Ok(est.iter().copied().collect())
    }

    #[getter]
    fn tau_d(&self) -> f64 {
        self.inner.tau_d()
    }
}

/// CBF safety filters for networked systems.
#[pymodule]
fn pynetcbf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(log_norm, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyDirtyDerivative>()?;
    m.add("HypothesisNotMet", m.py().get_type::<HypothesisNotMet>())?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    Ok(())
}
