//! Fixed-step forward-Euler simulation of the nominal, statically filtered and
//! two-time-scale dynamically filtered systems.

use std::io::Write;

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::estimation::{DirtyDerivative, EstimatorKind};
use crate::filter::{dynamic_filter_target, static_filter_from_drift, SafetySpec};
use crate::model::{DisturbanceSignal, DomainBox, NetworkModel, Vector};
use crate::norms::Norm;

/// A run aborts once a coordinate leaves the domain box by more than this
/// fraction of the box width.
pub const DOMAIN_EXIT_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Time-scale parameter of the dynamic filter.
    pub epsilon: f64,
    pub norm: Norm,
    pub estimator: EstimatorKind,
    pub x0: Vector,
    /// Initial fast state; zero when `None`.
    pub z0: Option<Vector>,
}

impl SimConfig {
    pub fn new(x0: Vector, dt: f64, horizon: f64) -> Self {
        Self {
            dt,
            horizon,
            epsilon: 0.1,
            norm: Norm::Two,
            estimator: EstimatorKind::Exact,
            x0,
            z0: None,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_estimator(mut self, estimator: EstimatorKind) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn with_norm(mut self, norm: Norm) -> Self {
        self.norm = norm;
        self
    }

    /// `ceil(horizon / dt)`, ignoring round-off in the ratio.
    pub fn steps(&self) -> usize {
        let ratio = self.horizon / self.dt;
        let nearest = ratio.round();
        if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest as usize
        } else {
            ratio.ceil() as usize
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon {} must be at least dt = {}",
                self.horizon, self.dt
            )));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("x0 must be finite".into()));
        }
        self.estimator.validate()
    }

    fn validate_dynamic(&self) -> Result<()> {
        self.validate()?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.under_resolved() {
            log::warn!(
                "dt = {} exceeds epsilon/10 = {}; fast dynamics are under-resolved",
                self.dt,
                self.epsilon / 10.0
            );
        }
        Ok(())
    }

    /// `dt > epsilon / 10`.
    pub fn under_resolved(&self) -> bool {
        self.dt > self.epsilon / 10.0 * (1.0 + 1e-12)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Nominal,
    Static,
    Dynamic,
}

/// Uniformly sampled simulation record; every series has one entry per grid
/// point `t_k = k dt`, `k = 0..=steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub kind: RunKind,
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    /// Fast filter state (dynamic runs only).
    pub fast: Option<Vec<Vector>>,
    /// Correction applied to the plant.
    pub corrections: Vec<Vector>,
    /// Closed-form filter evaluated on this trajectory (absent for nominal
    /// runs).
    pub static_ref: Option<Vec<Vector>>,
    /// Some component of the closed-form filter is nonzero.
    pub active: Vec<bool>,
    /// Norm of the derivative-estimate error.
    pub error_norms: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &Vector {
        self.states
            .last()
            .expect("trajectory has at least one sample")
    }

    /// Index of the first grid point with `t_k >= t`.
    pub fn index_at(&self, t: f64) -> usize {
        let k = ((t / self.dt) - 1e-9).ceil().max(0.0) as usize;
        k.min(self.len().saturating_sub(1))
    }

    /// Header `t,x_0..,z_0..,s_0..,active,e_norm`.
    pub fn csv_header(&self) -> String {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.corrections.first().map_or(0, |u| u.len());
        let mut cols = vec!["t".to_string()];
        cols.extend((0..n).map(|i| format!("x_{i}")));
        if self.fast.is_some() {
            cols.extend((0..m).map(|i| format!("z_{i}")));
        }
        if self.static_ref.is_some() {
            cols.extend((0..m).map(|i| format!("s_{i}")));
        }
        cols.push("active".into());
        cols.push("e_norm".into());
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.csv_header())?;
        let mut line = String::new();
        for k in 0..self.len() {
            use std::fmt::Write as _;
            line.clear();
            write!(line, "{}", self.times[k]).unwrap();
            for v in self.states[k].iter() {
                write!(line, ",{v}").unwrap();
            }
            if let Some(z) = &self.fast {
                for v in z[k].iter() {
                    write!(line, ",{v}").unwrap();
                }
            }
            if let Some(s) = &self.static_ref {
                for v in s[k].iter() {
                    write!(line, ",{v}").unwrap();
                }
            }
            write!(
                line,
                ",{},{}",
                u8::from(self.active[k]),
                self.error_norms[k]
            )
            .unwrap();
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }
}

/// Output of [`integrate_euler`].
#[derive(Clone, Debug, PartialEq)]
pub struct EulerSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
}

fn check_state(x: &Vector, step: usize, time: f64, domain: Option<&DomainBox>) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup { step, time });
    }
    if let Some(domain) = domain {
        if let Some(coordinate) = domain.excursion(x.as_slice(), DOMAIN_EXIT_FRACTION) {
            return Err(Error::DomainExit {
                step,
                time,
                coordinate,
                value: x[coordinate],
            });
        }
    }
    Ok(())
}

/// `x_{k+1} = x_k + dt rhs(t_k, x_k)` for `ceil(horizon/dt)` steps.
pub fn integrate_euler<F>(
    mut rhs: F,
    x0: &Vector,
    dt: f64,
    horizon: f64,
    domain: Option<&DomainBox>,
) -> Result<EulerSolution>
where
    F: FnMut(f64, &Vector) -> Result<Vector>,
{
    let cfg = SimConfig::new(x0.clone(), dt, horizon);
    cfg.validate()?;
    let steps = cfg.steps();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    check_state(&x, 0, 0.0, domain)?;
    for k in 0..steps {
        let t = k as f64 * dt;
        let dx = rhs(t, &x)?;
        check_len("rhs output", x.len(), dx.len())?;
        let next = &x + dx * dt;
        times.push(t);
        states.push(x);
        check_state(&next, k + 1, (k + 1) as f64 * dt, domain)?;
        x = next;
    }
    times.push(steps as f64 * dt);
    states.push(x);
    Ok(EulerSolution { times, states })
}

/// `x' = F(x) + w(t)`.
pub fn simulate_nominal(
    model: &NetworkModel,
    w: &DisturbanceSignal,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    check_len("x0", model.state_dim(), cfg.x0.len())?;
    check_len("disturbance", model.state_dim(), w.dim())?;
    let sol = integrate_euler(
        |t, x| Ok(model.eval_nominal_closed_loop(x)? + w.eval(t)),
        &cfg.x0,
        cfg.dt,
        cfg.horizon,
        Some(model.domain()),
    )?;
    let len = sol.times.len();
    Ok(Trajectory {
        kind: RunKind::Nominal,
        dt: cfg.dt,
        times: sol.times,
        states: sol.states,
        fast: None,
        corrections: vec![Vector::zeros(model.input_dim()); len],
        static_ref: None,
        active: vec![false; len],
        error_norms: vec![0.0; len],
    })
}

/// `x' = F(x) + B s(x) + w(t)` with the closed-form filter.
pub fn simulate_static(
    model: &NetworkModel,
    spec: &SafetySpec,
    w: &DisturbanceSignal,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_len("x0", model.state_dim(), cfg.x0.len())?;
    check_len("disturbance", model.state_dim(), w.dim())?;
    let steps = cfg.steps();
    let domain = Some(model.domain());
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut corrections = Vec::with_capacity(steps + 1);
    let mut active = Vec::with_capacity(steps + 1);

    let mut x = cfg.x0.clone();
    check_state(&x, 0, 0.0, domain)?;
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        let drift = model.eval_nominal_closed_loop(&x)? + w.eval(t);
        let filt = static_filter_from_drift(spec, model, &x, &drift)?;
        let next = if k < steps {
            let dx = drift + model.apply_input(&filt.s)?;
            let next = &x + dx * cfg.dt;
            check_state(&next, k + 1, (k + 1) as f64 * cfg.dt, domain)?;
            Some(next)
        } else {
            None
        };
        times.push(t);
        states.push(x);
        active.push(filt.any_active());
        corrections.push(filt.s);
        match next {
            Some(n) => x = n,
            None => break,
        }
    }
    let len = times.len();
    Ok(Trajectory {
        kind: RunKind::Static,
        dt: cfg.dt,
        times,
        static_ref: Some(corrections.clone()),
        states,
        fast: None,
        corrections,
        active,
        error_norms: vec![0.0; len],
    })
}

enum LocalEstimator {
    Exact,
    Biased(f64),
    Dirty(Vec<Option<DirtyDerivative>>),
}

/// Two-time-scale system `x' = F(x) + B z + w`,
/// `epsilon z_i' = -z_i + s~_i(x_i, z_i; xdot_hat_i)`, integrated with one
/// forward-Euler step size for both time scales.
///
/// Only constrained subsystems form derivative estimates; the recorded error
/// is zero on the others.
pub fn simulate_dynamic(
    model: &NetworkModel,
    spec: &SafetySpec,
    w: &DisturbanceSignal,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    cfg.validate_dynamic()?;
    let layout = model.layout();
    check_len("x0", model.state_dim(), cfg.x0.len())?;
    check_len("disturbance", model.state_dim(), w.dim())?;
    check_len("safety spec", layout.count(), spec.count())?;
    let z0 = cfg
        .z0
        .clone()
        .unwrap_or_else(|| Vector::zeros(model.input_dim()));
    check_len("z0", model.input_dim(), z0.len())?;

    let steps = cfg.steps();
    let dt = cfg.dt;
    let gain = dt / cfg.epsilon;
    let domain = Some(model.domain());

    let mut estimator = match cfg.estimator {
        EstimatorKind::Exact => LocalEstimator::Exact,
        EstimatorKind::Biased { offset } => LocalEstimator::Biased(offset),
        EstimatorKind::Dirty { tau_d } => LocalEstimator::Dirty(
            (0..layout.count())
                .map(|i| {
                    spec.is_constrained(i)
                        .then(|| DirtyDerivative::new(&layout.state_block(&cfg.x0, i), tau_d))
                        .transpose()
                })
                .collect::<Result<_>>()?,
        ),
    };

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut fast = Vec::with_capacity(steps + 1);
    let mut static_ref = Vec::with_capacity(steps + 1);
    let mut active = Vec::with_capacity(steps + 1);
    let mut error_norms = Vec::with_capacity(steps + 1);

    let mut x = cfg.x0.clone();
    let mut z = z0;
    check_state(&x, 0, 0.0, domain)?;
    let mut error = Vector::zeros(model.state_dim());
    let mut target = Vector::zeros(model.input_dim());
    for k in 0..=steps {
        let t = k as f64 * dt;
        let drift = model.eval_nominal_closed_loop(&x)? + w.eval(t);
        let reference = static_filter_from_drift(spec, model, &x, &drift)?;
        let xdot = &drift + model.apply_input(&z)?;

        error.fill(0.0);
        target.fill(0.0);
        for i in 0..layout.count() {
            let Some(barrier) = spec.barrier(i) else {
                continue;
            };
            let r = layout.state_range(i);
            let xi = layout.state_block(&x, i);
            let true_i = xdot.rows(r.start, r.len()).into_owned();
            let estimate = match &mut estimator {
                LocalEstimator::Exact => true_i.clone(),
                LocalEstimator::Biased(offset) => true_i.add_scalar(*offset),
                LocalEstimator::Dirty(ests) => ests[i]
                    .as_mut()
                    .expect("constrained subsystems own an estimator")
                    .step(&xi, dt)?,
            };
            error
                .rows_mut(r.start, r.len())
                .copy_from(&(&estimate - &true_i));
            let c = layout.input_range(i);
            let zi = z.rows(c.start, c.len()).into_owned();
            let si = dynamic_filter_target(barrier, model.input_block(i), &xi, &zi, &estimate)
                .map_err(|e| match e {
                    Error::WellPosedness { gain, .. } => Error::WellPosedness {
                        subsystem: Some(i),
                        gain,
                    },
                    other => other,
                })?;
            target.rows_mut(c.start, c.len()).copy_from(&si);
        }

        times.push(t);
        active.push(reference.any_active());
        static_ref.push(reference.s);
        error_norms.push(cfg.norm.vector(error.as_slice()));
        if k == steps {
            states.push(x);
            fast.push(z);
            break;
        }
        let next_x = &x + xdot * dt;
        let next_z = &z + (&target - &z) * gain;
        if next_z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup {
                step: k + 1,
                time: (k + 1) as f64 * dt,
            });
        }
        check_state(&next_x, k + 1, (k + 1) as f64 * dt, domain)?;
        states.push(std::mem::replace(&mut x, next_x));
        fast.push(std::mem::replace(&mut z, next_z));
    }

    Ok(Trajectory {
        kind: RunKind::Dynamic,
        dt,
        times,
        states,
        corrections: fast.clone(),
        fast: Some(fast),
        static_ref: Some(static_ref),
        active,
        error_norms,
    })
}
