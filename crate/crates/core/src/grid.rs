//! IEEE 14-bus frequency-safety case study.
//!
//! Every bus carries an angle `theta_n` and a frequency deviation `omega_n`
//! (Hz relative to nominal). Synchronous-generator buses add a mechanical
//! power state `p_m,n`:
//!
//! ```text
//! theta_n'       = omega_n
//! M_n omega_n'   = -D_n omega_n + p_m,n - p_l,n - p_n(theta) + u_n
//! tau_n p_m,n'   = -p_m,n + p_r,n - R_n omega_n          (generators only)
//! ```
//!
//! with DC power flow `p_n(theta) = sum_j b_nj (theta_n - theta_j)`. Inverter
//! buses (grid-following IBRs) omit the turbine state. The damping term is the
//! local nominal controller `kappa_n = -D_n omega_n`, acting through the same
//! channel `B_n = e_omega / M_n` as the safety correction. References are set
//! so that `x = 0` is the pre-disturbance equilibrium.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{static_filter_from_drift, Barrier, ClassK, SafetySpec};
use crate::model::{
    DisturbanceSignal, DomainBox, FieldFn, LocalFn, Matrix, NetworkModel, SubsystemLayout, Vector,
};
use crate::sim::{simulate_dynamic, SimConfig, Trajectory};

const LINES_FIXTURE: &str = include_str!("../data/ieee14_lines.csv");
const BUSES_FIXTURE: &str = include_str!("../data/ieee14_buses.csv");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusParams {
    /// 1-based bus number.
    pub bus: usize,
    pub inertia: f64,
    pub damping: f64,
    /// Turbine time constant; zero on inverter buses.
    pub turbine_tau: f64,
    pub droop: f64,
}

impl BusParams {
    pub fn is_generator(&self) -> bool {
        self.turbine_tau > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub from: usize,
    pub to: usize,
    pub reactance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    /// 0-based bus indices.
    pub from: usize,
    pub to: usize,
    pub susceptance: f64,
}

/// Load step applied at one bus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadStep {
    /// 1-based bus number.
    pub bus: usize,
    /// Magnitude in p.u.; positive values increase the load.
    pub magnitude_pu: f64,
    pub onset: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridParams {
    pub buses: Vec<BusParams>,
    pub lines: Vec<Line>,
    pub nominal_hz: f64,
    pub nadir_hz: f64,
    pub cbf_gain: f64,
    /// Put the frequency barrier on generator buses too.
    pub filter_all_buses: bool,
    pub load_step: LoadStep,
}

/// Overrides applied on top of the shipped IEEE-14 preset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridOverrides {
    pub nominal_hz: Option<f64>,
    pub nadir_hz: Option<f64>,
    pub cbf_gain: Option<f64>,
    pub filter_all_buses: Option<bool>,
    pub step_bus: Option<usize>,
    pub step_pu: Option<f64>,
    pub step_onset: Option<f64>,
    /// CSV `from,to,reactance` replacing the shipped line data.
    pub lines_csv: Option<String>,
    /// CSV `bus,inertia,damping,turbine_tau,droop` replacing the shipped table.
    pub buses_csv: Option<String>,
}

pub fn parse_bus_table(text: &str) -> Result<Vec<BusParams>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Config(format!("bus table: {e}"))))
        .collect()
}

pub fn parse_line_table(text: &str) -> Result<Vec<LineRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Config(format!("line table: {e}"))))
        .collect()
}

/// Shipped bus parameter table.
pub fn ieee14_bus_table() -> Vec<BusParams> {
    parse_bus_table(BUSES_FIXTURE).expect("shipped bus table parses")
}

/// Shipped line data (reactances in p.u. on a 100 MVA base).
pub fn ieee14_line_table() -> Vec<LineRecord> {
    parse_line_table(LINES_FIXTURE).expect("shipped line table parses")
}

impl GridParams {
    pub fn new(
        buses: Vec<BusParams>,
        line_records: &[LineRecord],
        nominal_hz: f64,
        nadir_hz: f64,
        cbf_gain: f64,
        filter_all_buses: bool,
        load_step: LoadStep,
    ) -> Result<Self> {
        for (k, b) in buses.iter().enumerate() {
            if b.bus != k + 1 {
                return Err(Error::Config(format!(
                    "bus table must list buses 1..N in order; row {} has bus {}",
                    k + 1,
                    b.bus
                )));
            }
            if !(b.inertia > 0.0 && b.damping > 0.0) {
                return Err(Error::Config(format!(
                    "bus {} needs M > 0 and D > 0",
                    b.bus
                )));
            }
            if b.turbine_tau < 0.0 || b.droop < 0.0 {
                return Err(Error::Config(format!(
                    "bus {} has negative tau or droop",
                    b.bus
                )));
            }
            if b.turbine_tau == 0.0 && b.droop != 0.0 {
                return Err(Error::Config(format!(
                    "bus {} has a droop but zero turbine time constant",
                    b.bus
                )));
            }
        }
        let n = buses.len();
        let lines = line_records
            .iter()
            .map(|l| {
                if l.from == 0 || l.to == 0 || l.from > n || l.to > n || l.from == l.to {
                    return Err(Error::Config(format!(
                        "line {}-{} has invalid endpoints",
                        l.from, l.to
                    )));
                }
                if !(l.reactance > 0.0) {
                    return Err(Error::Config(format!(
                        "line {}-{} needs positive reactance",
                        l.from, l.to
                    )));
                }
                Ok(Line {
                    from: l.from - 1,
                    to: l.to - 1,
                    susceptance: 1.0 / l.reactance,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if !(nadir_hz < nominal_hz) {
            return Err(Error::Config(
                "nadir must lie below the nominal frequency".into(),
            ));
        }
        if !(cbf_gain > 0.0) {
            return Err(Error::Config("CBF gain must be positive".into()));
        }
        if load_step.bus == 0 || load_step.bus > n {
            return Err(Error::Config(format!(
                "load step bus {} does not exist",
                load_step.bus
            )));
        }
        let params = Self {
            buses,
            lines,
            nominal_hz,
            nadir_hz,
            cbf_gain,
            filter_all_buses,
            load_step,
        };
        if !params.is_connected() {
            return Err(Error::Config("network is not connected".into()));
        }
        Ok(params)
    }

    /// Table values, 60 Hz nominal, 59.5 Hz nadir, CBF gain 10 and a 3 p.u.
    /// load step at bus 1 starting at t = 1 s.
    pub fn ieee14() -> Self {
        Self::ieee14_with(&GridOverrides::default()).expect("shipped preset is valid")
    }

    pub fn ieee14_with(ov: &GridOverrides) -> Result<Self> {
        let buses = match &ov.buses_csv {
            Some(path) => parse_bus_table(&read_fixture(path)?)?,
            None => ieee14_bus_table(),
        };
        let lines = match &ov.lines_csv {
            Some(path) => parse_line_table(&read_fixture(path)?)?,
            None => ieee14_line_table(),
        };
        Self::new(
            buses,
            &lines,
            ov.nominal_hz.unwrap_or(60.0),
            ov.nadir_hz.unwrap_or(59.5),
            ov.cbf_gain.unwrap_or(10.0),
            ov.filter_all_buses.unwrap_or(false),
            LoadStep {
                bus: ov.step_bus.unwrap_or(1),
                magnitude_pu: ov.step_pu.unwrap_or(3.0),
                onset: ov.step_onset.unwrap_or(1.0),
            },
        )
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    /// 1-based numbers of the generator buses.
    pub fn generator_buses(&self) -> Vec<usize> {
        self.buses
            .iter()
            .filter(|b| b.is_generator())
            .map(|b| b.bus)
            .collect()
    }

    /// Frequency floor in deviation coordinates (`nadir - nominal`).
    pub fn omega_floor(&self) -> f64 {
        self.nadir_hz - self.nominal_hz
    }

    pub fn layout(&self) -> SubsystemLayout {
        let dims = self
            .buses
            .iter()
            .map(|b| if b.is_generator() { 3 } else { 2 })
            .collect();
        SubsystemLayout::new(dims, vec![1; self.bus_count()]).expect("non-empty bus list")
    }

    /// Index of `theta_n` in the flat state (0-based bus index).
    pub fn theta_index(&self, bus: usize) -> usize {
        self.layout().state_offsets()[bus]
    }

    pub fn omega_index(&self, bus: usize) -> usize {
        self.theta_index(bus) + 1
    }

    pub fn omega_indices(&self) -> Vec<usize> {
        let layout = self.layout();
        (0..self.bus_count())
            .map(|n| layout.state_offsets()[n] + 1)
            .collect()
    }

    /// Buses carrying the frequency barrier.
    pub fn filtered_buses(&self) -> Vec<bool> {
        self.buses
            .iter()
            .map(|b| self.filter_all_buses || !b.is_generator())
            .collect()
    }

    fn is_connected(&self) -> bool {
        let n = self.bus_count();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for l in &self.lines {
                let other = if l.from == v {
                    l.to
                } else if l.to == v {
                    l.from
                } else {
                    continue;
                };
                if !seen[other] {
                    seen[other] = true;
                    stack.push(other);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Weighted Laplacian `B_bus` of the DC power flow.
    pub fn laplacian(&self) -> Matrix {
        let n = self.bus_count();
        let mut l = Matrix::zeros(n, n);
        for line in &self.lines {
            let (i, j, b) = (line.from, line.to, line.susceptance);
            l[(i, i)] += b;
            l[(j, j)] += b;
            l[(i, j)] -= b;
            l[(j, i)] -= b;
        }
        l
    }
}

fn read_fixture(path: &str) -> Result<String> {
    std::fs::read_to_string(Path::new(path))
        .map_err(|e| Error::Config(format!("cannot read {path}: {e}")))
}

/// DC power injections `p_n = sum_j b_nj (theta_n - theta_j)`.
pub fn dc_power_injection(params: &GridParams, theta: &[f64]) -> Result<Vec<f64>> {
    if theta.len() != params.bus_count() {
        return Err(Error::Dimension {
            what: "bus angles",
            expected: params.bus_count(),
            got: theta.len(),
        });
    }
    let mut p = vec![0.0; theta.len()];
    accumulate_injection(&params.lines, theta, &mut p);
    Ok(p)
}

fn accumulate_injection(lines: &[Line], theta: &[f64], p: &mut [f64]) {
    for line in lines {
        let flow = line.susceptance * (theta[line.from] - theta[line.to]);
        p[line.from] += flow;
        p[line.to] -= flow;
    }
}

/// Frequency barriers `h_n = omega_n - (nadir - nominal)` on the filtered
/// buses, with `alpha_n(s) = gain * s`.
pub fn frequency_cbf(params: &GridParams) -> SafetySpec {
    let floor = params.omega_floor();
    let barriers = params
        .buses
        .iter()
        .zip(params.filtered_buses())
        .map(|(b, filtered)| {
            filtered.then(|| {
                let dim = if b.is_generator() { 3 } else { 2 };
                let mut c = Vector::zeros(dim);
                c[1] = 1.0;
                Barrier::affine(c, -floor, ClassK::Linear(params.cbf_gain))
            })
        })
        .collect();
    SafetySpec::new(barriers)
}

/// Domain box used for constant estimation: angles in `[-2 pi, 2 pi]`,
/// frequency deviations in `[-2, 2]` Hz, mechanical powers in `[-2, 2]` p.u.
pub fn default_domain(params: &GridParams) -> DomainBox {
    let layout = params.layout();
    let mut lower = Vec::with_capacity(layout.state_dim());
    let mut upper = Vec::with_capacity(layout.state_dim());
    for b in &params.buses {
        lower.extend([-2.0 * std::f64::consts::PI, -2.0]);
        upper.extend([2.0 * std::f64::consts::PI, 2.0]);
        if b.is_generator() {
            lower.push(-2.0);
            upper.push(2.0);
        }
    }
    DomainBox::new(lower, upper).expect("finite bounds")
}

/// Everything needed to simulate the case study.
#[derive(Clone, Debug)]
pub struct Ieee14Case {
    pub params: GridParams,
    pub model: NetworkModel,
    pub spec: SafetySpec,
    pub disturbance: DisturbanceSignal,
}

pub fn build_ieee14(params: GridParams) -> Result<Ieee14Case> {
    let layout = params.layout();
    let offsets = layout.state_offsets().to_vec();
    let n_bus = params.bus_count();

    let buses = params.buses.clone();
    let lines = params.lines.clone();
    let coupling: FieldFn = Arc::new(move |x: &Vector| {
        let theta: Vec<f64> = offsets[..n_bus].iter().map(|&o| x[o]).collect();
        let mut p = vec![0.0; n_bus];
        accumulate_injection(&lines, &theta, &mut p);
        let mut dx = Vector::zeros(x.len());
        for (n, b) in buses.iter().enumerate() {
            let o = offsets[n];
            let omega = x[o + 1];
            dx[o] = omega;
            let mut power = -p[n];
            if b.is_generator() {
                let pm = x[o + 2];
                power += pm;
                dx[o + 2] = (-pm - b.droop * omega) / b.turbine_tau;
            }
            dx[o + 1] = power / b.inertia;
        }
        dx
    });

    let input_blocks = params
        .buses
        .iter()
        .map(|b| {
            let dim = if b.is_generator() { 3 } else { 2 };
            let mut blk = Matrix::zeros(dim, 1);
            blk[(1, 0)] = 1.0 / b.inertia;
            blk
        })
        .collect();
    let nominal = params
        .buses
        .iter()
        .map(|b| {
            let d = b.damping;
            let f: LocalFn = Arc::new(move |xn: &Vector| Vector::from_element(1, -d * xn[1]));
            Some(f)
        })
        .collect();
    let model = NetworkModel::new(
        layout.clone(),
        coupling,
        input_blocks,
        nominal,
        default_domain(&params),
    )?;

    let step = &params.load_step;
    let mut w = Vector::zeros(layout.state_dim());
    let bus = step.bus - 1;
    w[params.omega_index(bus)] = -step.magnitude_pu / params.buses[bus].inertia;
    let disturbance = DisturbanceSignal::step(step.onset, w);

    Ok(Ieee14Case {
        spec: frequency_cbf(&params),
        params,
        model,
        disturbance,
    })
}

/// The closed-form filter written directly in grid quantities:
/// `s_n = max{0, -M_n e_omega_n^T (F(x) + w) - M_n alpha_n (omega_n - floor)}`.
pub fn grid_filter_formula(case: &Ieee14Case, x: &Vector, w: &Vector) -> Result<Vector> {
    let drift = case.model.eval_nominal_closed_loop(x)? + w;
    let params = &case.params;
    let floor = params.omega_floor();
    Ok(Vector::from_iterator(
        params.bus_count(),
        params
            .buses
            .iter()
            .zip(params.filtered_buses())
            .enumerate()
            .map(|(n, (b, filtered))| {
                if !filtered {
                    return 0.0;
                }
                let k = params.omega_index(n);
                let m = b.inertia;
                (-m * drift[k] - m * params.cbf_gain * (x[k] - floor)).max(0.0)
            }),
    ))
}

/// Lower-bound frequency violation `v(t_k) = max_n max{0, floor - omega_n}` in
/// Hz.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViolationSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub max: f64,
    pub argmax_time: f64,
}

impl ViolationSeries {
    /// Total time with strictly positive violation.
    pub fn support_duration(&self, dt: f64) -> f64 {
        self.values.iter().filter(|v| **v > 0.0).count() as f64 * dt
    }
}

pub fn violation_metric(traj: &Trajectory, params: &GridParams) -> ViolationSeries {
    let floor = params.omega_floor();
    let idx = params.omega_indices();
    let values: Vec<f64> = traj
        .states
        .iter()
        .map(|x| {
            idx.iter()
                .map(|&k| (floor - x[k]).max(0.0))
                .fold(0.0, f64::max)
        })
        .collect();
    ViolationSeries::from_values(traj.times.clone(), values)
}

impl ViolationSeries {
    pub fn from_values(times: Vec<f64>, values: Vec<f64>) -> Self {
        let (mut max, mut arg) = (0.0, 0);
        for (k, v) in values.iter().enumerate() {
            if *v > max {
                max = *v;
                arg = k;
            }
        }
        Self {
            max,
            argmax_time: times.get(arg).copied().unwrap_or(0.0),
            times,
            values,
        }
    }
}

/// `count` logarithmically spaced points covering `[lo, hi]`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || count == 0 {
        return Err(Error::InvalidArgument(format!(
            "need 0 < lo <= hi and count > 0, got [{lo}, {hi}] x {count}"
        )));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|k| {
            if k == 0 {
                lo
            } else if k == count - 1 {
                hi
            } else {
                (a + (b - a) * k as f64 / (count - 1) as f64).exp()
            }
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct SweepCell {
    pub epsilon: f64,
    pub outcome: std::result::Result<ViolationSeries, String>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub dt: f64,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn succeeded(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_ok()).count()
    }

    /// Rows `eps,t,violation_hz` for `t` in `[from, to]`.
    pub fn heatmap_csv(&self, from: f64, to: f64) -> String {
        let mut out = String::from("eps,t,violation_hz\n");
        for cell in &self.cells {
            let Ok(series) = &cell.outcome else { continue };
            for (t, v) in series.times.iter().zip(&series.values) {
                if *t >= from - 1e-12 && *t <= to + 1e-12 {
                    out.push_str(&format!("{},{},{}\n", cell.epsilon, t, v));
                }
            }
        }
        out
    }
}

/// One dynamic run per `epsilon`, identical disturbance and estimator,
/// recording the violation series given by `metric`. Cells whose `epsilon`
/// breaks the `dt <= epsilon / 10` resolution rule, or whose run fails, are
/// reported and skipped.
pub fn epsilon_sweep<M>(
    model: &NetworkModel,
    spec: &SafetySpec,
    w: &DisturbanceSignal,
    base: &SimConfig,
    eps_grid: &[f64],
    metric: M,
) -> SweepResult
where
    M: Fn(&Trajectory) -> ViolationSeries + Sync,
{
    let cells = eps_grid
        .par_iter()
        .map(|&epsilon| {
            let cfg = base.clone().with_epsilon(epsilon);
            let outcome = if cfg.under_resolved() {
                Err(format!(
                    "dt = {} exceeds epsilon/10 = {}",
                    cfg.dt,
                    epsilon / 10.0
                ))
            } else {
                simulate_dynamic(model, spec, w, &cfg)
                    .map(|traj| metric(&traj))
                    .map_err(|e| e.to_string())
            };
            SweepCell { epsilon, outcome }
        })
        .collect();
    SweepResult { dt: base.dt, cells }
}

/// [`epsilon_sweep`] on the grid case with the frequency violation metric.
pub fn grid_epsilon_sweep(case: &Ieee14Case, base: &SimConfig, eps_grid: &[f64]) -> SweepResult {
    epsilon_sweep(
        &case.model,
        &case.spec,
        &case.disturbance,
        base,
        eps_grid,
        |traj| violation_metric(traj, &case.params),
    )
}

/// Closed-form filter evaluated through the generic path, for comparison with
/// [`grid_filter_formula`].
pub fn generic_filter(case: &Ieee14Case, x: &Vector, w: &Vector) -> Result<Vector> {
    let drift = case.model.eval_nominal_closed_loop(x)? + w;
    Ok(static_filter_from_drift(&case.spec, &case.model, x, &drift)?.s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_nominal, simulate_static};

    #[test]
    fn injection_examples() {
        let params = GridParams::ieee14();
        assert!(dc_power_injection(&params, &[0.0; 14])
            .unwrap()
            .iter()
            .all(|p| *p == 0.0));
        let shifted = dc_power_injection(&params, &[0.37; 14]).unwrap();
        assert!(shifted.iter().all(|p| p.abs() < 1e-12));

        let two_bus = GridParams::new(
            vec![
                BusParams {
                    bus: 1,
                    inertia: 1.0,
                    damping: 1.0,
                    turbine_tau: 0.0,
                    droop: 0.0,
                },
                BusParams {
                    bus: 2,
                    inertia: 1.0,
                    damping: 1.0,
                    turbine_tau: 0.0,
                    droop: 0.0,
                },
            ],
            &[LineRecord {
                from: 1,
                to: 2,
                reactance: 0.2,
            }],
            60.0,
            59.5,
            10.0,
            false,
            LoadStep {
                bus: 1,
                magnitude_pu: 1.0,
                onset: 0.0,
            },
        )
        .unwrap();
        let p = dc_power_injection(&two_bus, &[0.1, 0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn injection_equals_laplacian_product() {
        let params = GridParams::ieee14();
        let theta: Vec<f64> = (0..14).map(|k| (k as f64 * 0.7).sin()).collect();
        let p = dc_power_injection(&params, &theta).unwrap();
        let lp = params.laplacian() * Vector::from_vec(theta);
        for (a, b) in p.iter().zip(lp.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn preset_matches_table() {
        let params = GridParams::ieee14();
        assert_eq!(params.generator_buses(), vec![2, 3, 6, 8]);
        let b1 = &params.buses[0];
        assert_eq!(
            (b1.inertia, b1.damping, b1.turbine_tau, b1.droop),
            (2.5, 1.2, 0.0, 0.0)
        );
        let b8 = &params.buses[7];
        assert_eq!(
            (b8.inertia, b8.damping, b8.turbine_tau, b8.droop),
            (3.2, 1.6, 0.8, 0.09)
        );
        assert_eq!(params.lines.len(), 20);
        assert_eq!(params.omega_floor(), -0.5);
    }

    #[test]
    fn state_dimension() {
        let case = build_ieee14(GridParams::ieee14()).unwrap();
        assert_eq!(case.model.state_dim(), 32);
        assert_eq!(case.model.input_dim(), 14);
        let zero = Vector::zeros(32);
        assert_eq!(case.model.eval_coupling(&zero).unwrap(), zero);
    }

    #[test]
    fn equilibrium_before_step() {
        let case = build_ieee14(GridParams::ieee14()).unwrap();
        let cfg = SimConfig::new(Vector::zeros(32), 1e-3, 0.9);
        let traj = simulate_nominal(&case.model, &case.disturbance, &cfg).unwrap();
        assert!(traj.states.iter().all(|x| x.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn equilibrium_is_inactive() {
        let case = build_ieee14(GridParams::ieee14()).unwrap();
        let f = crate::filter::static_filter(
            &case.spec,
            &case.model,
            &Vector::zeros(32),
            &Vector::zeros(32),
        )
        .unwrap();
        assert!(!f.any_active());
        for (n, margins) in f.margins.iter().enumerate() {
            if case.spec.is_constrained(n) {
                assert!((margins - 5.0).abs() < 1e-12);
            } else {
                assert!(margins.is_infinite());
            }
        }
    }

    #[test]
    fn missing_turbine_constant_rejected() {
        let mut buses = ieee14_bus_table();
        buses[1].turbine_tau = 0.0;
        let r = GridParams::new(
            buses,
            &ieee14_line_table(),
            60.0,
            59.5,
            10.0,
            false,
            LoadStep {
                bus: 1,
                magnitude_pu: 3.0,
                onset: 1.0,
            },
        );
        assert!(r.is_err());
    }

    #[test]
    fn violation_examples() {
        let params = GridParams::ieee14();
        let case = build_ieee14(params.clone()).unwrap();
        let mut x = Vector::zeros(32);
        let mut traj = simulate_static(
            &case.model,
            &case.spec,
            &DisturbanceSignal::zero(32),
            &SimConfig::new(x.clone(), 0.1, 0.2),
        )
        .unwrap();
        assert_eq!(violation_metric(&traj, &params).max, 0.0);
        // omega_3 = 59.3 Hz
        x[params.omega_index(2)] = -0.7;
        traj.states[1] = x;
        let v = violation_metric(&traj, &params);
        assert!((v.values[1] - 0.2).abs() < 1e-12);
        assert!((v.max - 0.2).abs() < 1e-12);
        assert_eq!(v.argmax_time, traj.times[1]);
    }

    #[test]
    fn log_grid() {
        let g = log_spaced(1e-2, 1.0, 12).unwrap();
        assert_eq!(g.len(), 12);
        assert_eq!(g[0], 1e-2);
        assert_eq!(g[11], 1.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        let ratio = g[1] / g[0];
        assert!((g[6] / g[5] - ratio).abs() < 1e-12);
        assert_eq!(log_spaced(0.1, 1.0, 1).unwrap(), vec![0.1]);
    }
}
