//! Constants and trajectory-deviation bounds between the dynamically and
//! statically filtered systems.
//!
//! Every constant is a sampled estimate over the model's domain box, not a
//! certified bound. Reports carry sample counts and seeds so runs can be
//! reproduced.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{eval_direction, static_filter, static_filter_from_drift, SafetySpec};
use crate::model::{DisturbanceSignal, DomainBox, Matrix, NetworkModel, Vector};
use crate::norms::Norm;
use crate::sim::{simulate_dynamic, simulate_static, SimConfig, Trajectory};

pub use crate::norms::log_norm;

/// Minimum Monte-Carlo sample count for `c_F`.
pub const MIN_CONTRACTION_SAMPLES: usize = 500;
/// Minimum number of pairs for the Lipschitz estimate of the filter.
pub const MIN_LIPSCHITZ_PAIRS: usize = 10_000;
/// Relative central-difference step for Jacobians.
pub const FD_STEP: f64 = 1e-6;
/// Short-range pairs are at most this fraction of the box diameter apart.
pub const SHORT_RANGE_FRACTION: f64 = 1e-3;
/// Absolute slack when comparing an empirical curve against its bound.
pub const BOUND_TOL: f64 = 1e-12;

/// Central-difference Jacobian of `field` at `x`.
pub fn jacobian_fd<F>(field: F, x: &Vector, rel_step: f64) -> Result<Matrix>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    let n = x.len();
    let mut jac = Matrix::zeros(n, n);
    let mut probe = x.clone();
    for j in 0..n {
        let h = rel_step * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let plus = field(&probe)?;
        probe[j] = x[j] - h;
        let minus = field(&probe)?;
        probe[j] = x[j];
        if plus.len() != n {
            return Err(Error::Dimension {
                what: "vector field output",
                expected: n,
                got: plus.len(),
            });
        }
        let col = (plus - minus) / (2.0 * h);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite Jacobian column {j}")));
        }
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Uniform samples from `domain`, reproducible from `seed`.
pub fn sample_domain(domain: &DomainBox, count: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| domain.sample(&mut rng)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionEstimate {
    /// Sample max of `mu(DF(x))`.
    pub max: f64,
    pub p95: f64,
    pub samples: usize,
}

/// Sampled one-sided Lipschitz constant `c_F = sup mu(DF(x))` of the nominal
/// closed loop.
pub fn estimate_contraction(
    model: &NetworkModel,
    samples: &[Vector],
    norm: Norm,
) -> Result<ContractionEstimate> {
    if samples.len() < MIN_CONTRACTION_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "c_F needs at least {MIN_CONTRACTION_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let mut values = samples
        .par_iter()
        .map(|x| {
            let jac = jacobian_fd(|y| model.eval_nominal_closed_loop(y), x, FD_STEP)?;
            log_norm(&jac, norm)
        })
        .collect::<Result<Vec<f64>>>()?;
    values.sort_by(f64::total_cmp);
    let p95_idx = ((values.len() as f64 * 0.95).ceil() as usize).clamp(1, values.len()) - 1;
    Ok(ContractionEstimate {
        max: *values.last().expect("non-empty"),
        p95: values[p95_idx],
        samples: values.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    /// Largest observed difference quotient; a lower estimate of the true
    /// constant.
    pub value: f64,
    pub pairs: usize,
    pub skipped: usize,
    pub seed: u64,
}

/// Pairs alternate between independent uniform draws and short-range
/// perturbations. The sequence for `pairs = n` is a prefix of the sequence for
/// any larger count with the same seed.
pub fn lipschitz_pairs(domain: &DomainBox, pairs: usize, seed: u64) -> Vec<(Vector, Vector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = SHORT_RANGE_FRACTION * domain.diameter();
    (0..pairs)
        .map(|k| {
            let x = domain.sample(&mut rng);
            let y = if k % 2 == 0 {
                domain.sample(&mut rng)
            } else {
                let dir = Vector::from_fn(x.len(), |_, _| rng.random_range(-1.0..1.0));
                let len = dir.norm();
                let scale = if len > 0.0 {
                    radius * rng.random::<f64>() / len
                } else {
                    0.0
                };
                let mut y = &x + dir * scale;
                for (j, v) in y.iter_mut().enumerate() {
                    *v = v.clamp(domain.lower()[j], domain.upper()[j]);
                }
                y
            };
            (x, y)
        })
        .collect()
}

/// `max ||s(x) - s(y)|| / ||x - y||` over sampled pairs, with the disturbance
/// frozen at `w`.
pub fn estimate_lipschitz_s(
    spec: &SafetySpec,
    model: &NetworkModel,
    w: &Vector,
    pairs: usize,
    seed: u64,
    norm: Norm,
) -> Result<LipschitzEstimate> {
    if pairs < MIN_LIPSCHITZ_PAIRS {
        return Err(Error::InvalidArgument(format!(
            "Lipschitz estimate needs at least {MIN_LIPSCHITZ_PAIRS} pairs, got {pairs}"
        )));
    }
    let samples = lipschitz_pairs(model.domain(), pairs, seed);
    lipschitz_over_pairs(spec, model, w, &samples, norm).map(|(value, skipped)| LipschitzEstimate {
        value,
        pairs,
        skipped,
        seed,
    })
}

/// Difference-quotient max over explicit pairs; returns the value and the
/// number of coincident pairs skipped.
pub fn lipschitz_over_pairs(
    spec: &SafetySpec,
    model: &NetworkModel,
    w: &Vector,
    pairs: &[(Vector, Vector)],
    norm: Norm,
) -> Result<(f64, usize)> {
    let quotients = pairs
        .par_iter()
        .map(|(x, y)| {
            let gap = norm.vector((x - y).as_slice());
            if gap == 0.0 {
                return Ok(None);
            }
            let sx = static_filter(spec, model, x, w)?.s;
            let sy = static_filter(spec, model, y, w)?.s;
            Ok(Some(norm.vector((sx - sy).as_slice()) / gap))
        })
        .collect::<Result<Vec<Option<f64>>>>()?;
    let skipped = quotients.iter().filter(|q| q.is_none()).count();
    let value = quotients.into_iter().flatten().fold(0.0, f64::max);
    Ok((value, skipped))
}

/// Norm of the rank-one block `d_i grad h_i^T`.
pub fn rank_one_norm(d: &Vector, grad: &Vector, norm: Norm) -> f64 {
    match norm {
        Norm::Two => d.norm() * grad.norm(),
        Norm::Inf => d.amax() * grad.lp_norm(1),
    }
}

/// `sup_x ||blkdiag(d_i(x_i) grad h_i(x_i)^T)||` over the samples.
pub fn estimate_error_gain(
    spec: &SafetySpec,
    model: &NetworkModel,
    samples: &[Vector],
    norm: Norm,
) -> Result<f64> {
    let layout = model.layout();
    let mut best: f64 = 0.0;
    for x in samples {
        for i in 0..layout.count() {
            let Some(barrier) = spec.barrier(i) else {
                continue;
            };
            let xi = layout.state_block(x, i);
            let d = eval_direction(barrier, model.input_block(i), &xi).map_err(|e| match e {
                Error::WellPosedness { gain, .. } => Error::WellPosedness {
                    subsystem: Some(i),
                    gain,
                },
                other => other,
            })?;
            best = best.max(rank_one_norm(&d, &barrier.grad(&xi), norm));
        }
    }
    Ok(best)
}

/// `E = (eps l_sx N + l_se e) / (1 - eps l_sx |B|)`.
pub fn tracking_floor(
    epsilon: f64,
    filter_lipschitz: f64,
    input_gain: f64,
    error_gain: f64,
    drift_sup: f64,
    error_sup: f64,
) -> Result<f64> {
    let margin = 1.0 - epsilon * filter_lipschitz * input_gain;
    if !(margin > 0.0) {
        return Err(Error::HypothesisNotMet(format!(
            "epsilon * l_sx * |B| = {} must be below 1",
            epsilon * filter_lipschitz * input_gain
        )));
    }
    Ok((epsilon * filter_lipschitz * drift_sup + error_gain * error_sup) / margin)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantEstimates {
    pub contraction_rate: f64,
    pub contraction_p95: f64,
    pub filter_lipschitz: f64,
    pub error_gain: f64,
    pub input_gain: f64,
    pub drift_sup: f64,
    pub error_sup: f64,
    pub epsilon: f64,
    pub norm: Norm,
    pub sample_count: usize,
    pub pair_count: usize,
    pub seed: u64,
    /// Start of the analysis window.
    pub t0: f64,
}

impl ConstantEstimates {
    /// `1/eps - l_sx |B|`.
    pub fn decay_rate(&self) -> f64 {
        1.0 / self.epsilon - self.filter_lipschitz * self.input_gain
    }

    pub fn tracking_floor(&self) -> Result<f64> {
        tracking_floor(
            self.epsilon,
            self.filter_lipschitz,
            self.input_gain,
            self.error_gain,
            self.drift_sup,
            self.error_sup,
        )
    }

    pub fn check_tracking(&self) -> Result<()> {
        let lambda = self.decay_rate();
        if !(lambda > 0.0) {
            return Err(Error::HypothesisNotMet(format!(
                "1/eps - l_sx |B| = {lambda} is not positive (eps = {}, l_sx = {}, |B| = {})",
                self.epsilon, self.filter_lipschitz, self.input_gain
            )));
        }
        Ok(())
    }

    pub fn check_deviation(&self) -> Result<()> {
        self.check_tracking()?;
        if !(self.contraction_rate < 0.0) {
            return Err(Error::HypothesisNotMet(format!(
                "nominal dynamics are not contracting: c_F = {} >= 0",
                self.contraction_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Tracking,
    Deviation,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub satisfied: bool,
    pub first_violation_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub times: Vec<f64>,
    pub empirical: Vec<f64>,
    pub bound: Vec<f64>,
    /// Accumulated active time from the window start.
    pub active_time: Vec<f64>,
    pub verdict: Verdict,
    pub slack_min: f64,
    pub slack_median: f64,
}

impl BoundReport {
    fn new(
        kind: BoundKind,
        times: Vec<f64>,
        empirical: Vec<f64>,
        bound: Vec<f64>,
        active_time: Vec<f64>,
    ) -> Self {
        let first_violation_time = empirical
            .iter()
            .zip(&bound)
            .position(|(e, b)| !(*e <= *b + BOUND_TOL))
            .map(|k| times[k]);
        let mut slack: Vec<f64> = bound.iter().zip(&empirical).map(|(b, e)| b - e).collect();
        slack.sort_by(f64::total_cmp);
        let slack_min = slack.first().copied().unwrap_or(0.0);
        let slack_median = if slack.is_empty() {
            0.0
        } else {
            slack[slack.len() / 2]
        };
        Self {
            kind,
            times,
            empirical,
            bound,
            active_time,
            verdict: Verdict {
                satisfied: first_violation_time.is_none(),
                first_violation_time,
            },
            slack_min,
            slack_median,
        }
    }

    pub fn sup_empirical(&self) -> f64 {
        self.empirical.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,empirical,bound,active_time\n");
        for k in 0..self.times.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.times[k], self.empirical[k], self.bound[k], self.active_time[k]
            ));
        }
        out
    }
}

/// Index of the first grid point at or after `t0`.
pub fn window_start(traj: &Trajectory, t0: f64) -> usize {
    traj.times
        .iter()
        .position(|t| *t >= t0 - 1e-9 * traj.dt)
        .unwrap_or(traj.times.len().saturating_sub(1))
}

/// `||z(t_k) - s(x(t_k))||` along a dynamic run.
pub fn tracking_error(traj: &Trajectory, norm: Norm) -> Result<Vec<f64>> {
    let (Some(fast), Some(reference)) = (&traj.fast, &traj.static_ref) else {
        return Err(Error::InvalidArgument(
            "tracking error needs a dynamic trajectory".into(),
        ));
    };
    Ok(fast
        .iter()
        .zip(reference)
        .map(|(z, s)| norm.vector((z - s).as_slice()))
        .collect())
}

/// `max_k ||F(x_k) + B s(x_k) + w(t_k)||` for `k >= from`.
pub fn drift_bound(
    model: &NetworkModel,
    spec: &SafetySpec,
    w: &DisturbanceSignal,
    traj: &Trajectory,
    from: usize,
    norm: Norm,
) -> Result<f64> {
    let mut best: f64 = 0.0;
    for k in from..traj.len() {
        let x = &traj.states[k];
        let drift = model.eval_nominal_closed_loop(x)? + w.eval(traj.times[k]);
        let s = static_filter_from_drift(spec, model, x, &drift)?.s;
        let rhs = drift + model.apply_input(&s)?;
        best = best.max(norm.vector(rhs.as_slice()));
    }
    Ok(best)
}

/// Left-rectangle accumulation of the active-set indicator: entry `k` is the
/// time spent active on `[t_0, t_k)`.
pub fn active_time_curve(active: &[bool], dt: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(active.len());
    for a in active {
        out.push(acc);
        if *a {
            acc += dt;
        }
    }
    out
}

/// `||z~(t)|| <= exp(-lambda (t - t0)) ||z~(t0)|| + E` evaluated on the
/// window starting at `consts.t0`.
pub fn tracking_bound_curve(
    traj_dyn: &Trajectory,
    consts: &ConstantEstimates,
) -> Result<BoundReport> {
    consts.check_tracking()?;
    let lambda = consts.decay_rate();
    let e = consts.tracking_floor()?;
    let k0 = window_start(traj_dyn, consts.t0);
    let errors = tracking_error(traj_dyn, consts.norm)?;
    let z0 = errors[k0];
    let t0 = traj_dyn.times[k0];
    let times = traj_dyn.times[k0..].to_vec();
    let bound = times
        .iter()
        .map(|t| (-lambda * (t - t0)).exp() * z0 + e)
        .collect();
    let n = times.len();
    Ok(BoundReport::new(
        BoundKind::Tracking,
        times,
        errors[k0..].to_vec(),
        bound,
        vec![0.0; n],
    ))
}

/// `||x(t) - x_s(t)||` against the contraction-based bound, with the active
/// set `A` being every grid point where either filter is nonzero.
pub fn active_time_and_deviation_curve(
    traj_dyn: &Trajectory,
    traj_static: &Trajectory,
    consts: &ConstantEstimates,
) -> Result<BoundReport> {
    if traj_dyn.len() != traj_static.len() || (traj_dyn.dt - traj_static.dt).abs() > 0.0 {
        return Err(Error::InvalidArgument(
            "dynamic and static trajectories must share the time grid".into(),
        ));
    }
    let (Some(s_dyn), Some(s_stat)) = (&traj_dyn.static_ref, &traj_static.static_ref) else {
        return Err(Error::InvalidArgument(
            "both trajectories must record the closed-form filter".into(),
        ));
    };
    consts.check_deviation()?;
    let norm = consts.norm;
    let lambda = consts.decay_rate();
    let e = consts.tracking_floor()?;
    let k0 = window_start(traj_dyn, consts.t0);
    let t0 = traj_dyn.times[k0];
    let z_err = tracking_error(traj_dyn, norm)?;
    let active: Vec<bool> = (k0..traj_dyn.len())
        .map(|k| s_dyn[k].iter().any(|v| *v != 0.0) || s_stat[k].iter().any(|v| *v != 0.0))
        .collect();
    let t_active = active_time_curve(&active, traj_dyn.dt);
    let empirical: Vec<f64> = (k0..traj_dyn.len())
        .map(|k| norm.vector((&traj_dyn.states[k] - &traj_static.states[k]).as_slice()))
        .collect();
    let x0 = empirical[0];
    let z0 = z_err[k0];
    let growth = consts.filter_lipschitz * consts.input_gain;
    let times = traj_dyn.times[k0..].to_vec();
    let bound = times
        .iter()
        .zip(&t_active)
        .map(|(t, ta)| {
            (consts.contraction_rate * (t - t0) + growth * ta).exp() * x0
                + consts.input_gain
                    * (growth * ta).exp()
                    * (z0 / lambda + e / consts.contraction_rate.abs())
        })
        .collect();
    Ok(BoundReport::new(
        BoundKind::Deviation,
        times,
        empirical,
        bound,
        t_active,
    ))
}

/// Sampling and simulation settings for [`verify_bounds`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisSettings {
    pub seed: u64,
    pub samples: usize,
    pub pairs: usize,
    /// Replace the sampled `l_sx` (negative controls).
    pub filter_lipschitz_override: Option<f64>,
}

impl AnalysisSettings {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            samples: 1_000,
            pairs: MIN_LIPSCHITZ_PAIRS,
            filter_lipschitz_override: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BoundStatus {
    Satisfied {
        first_violation_time: Option<f64>,
        slack_min: f64,
        slack_median: f64,
    },
    Violated {
        first_violation_time: Option<f64>,
        slack_min: f64,
        slack_median: f64,
    },
    HypothesisNotMet {
        reason: String,
    },
}

impl BoundStatus {
    fn from_result(r: &Result<BoundReport>) -> Result<Self> {
        match r {
            Ok(rep) if rep.verdict.satisfied => Ok(Self::Satisfied {
                first_violation_time: None,
                slack_min: rep.slack_min,
                slack_median: rep.slack_median,
            }),
            Ok(rep) => Ok(Self::Violated {
                first_violation_time: rep.verdict.first_violation_time,
                slack_min: rep.slack_min,
                slack_median: rep.slack_median,
            }),
            Err(Error::HypothesisNotMet(reason)) => Ok(Self::HypothesisNotMet {
                reason: reason.clone(),
            }),
            Err(e) => Err(Error::Numerical(e.to_string())),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Satisfied { .. } => "satisfied",
            Self::Violated { .. } => "violated",
            Self::HypothesisNotMet { .. } => "hypothesis_not_met",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifySummary {
    pub constants: ConstantEstimates,
    pub filter_lipschitz_is_lower_estimate: bool,
    pub tracking: BoundStatus,
    pub deviation: BoundStatus,
}

/// Output of [`verify_bounds`]: both trajectories, both reports (or the
/// hypothesis that failed) and a serializable summary.
#[derive(Debug)]
pub struct VerifyOutcome {
    pub traj_dynamic: Trajectory,
    pub traj_static: Trajectory,
    pub tracking: Result<BoundReport>,
    pub deviation: Result<BoundReport>,
    pub summary: VerifySummary,
}

impl VerifyOutcome {
    pub fn hypothesis_failed(&self) -> bool {
        matches!(self.tracking, Err(Error::HypothesisNotMet(_)))
            || matches!(self.deviation, Err(Error::HypothesisNotMet(_)))
    }

    pub fn all_satisfied(&self) -> bool {
        matches!(&self.tracking, Ok(r) if r.verdict.satisfied)
            && matches!(&self.deviation, Ok(r) if r.verdict.satisfied)
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

/// Runs the static and dynamic simulations with a shared disturbance,
/// estimates every constant and evaluates both bounds. The analysis window
/// starts once the disturbance has settled to its final value; the Lipschitz
/// constant is estimated with `w` frozen at the horizon.
pub fn verify_bounds(
    model: &NetworkModel,
    spec: &SafetySpec,
    w: &DisturbanceSignal,
    cfg: &SimConfig,
    settings: &AnalysisSettings,
) -> Result<VerifyOutcome> {
    let norm = cfg.norm;
    let traj_static = simulate_static(model, spec, w, cfg)?;
    let traj_dynamic = simulate_dynamic(model, spec, w, cfg)?;

    let t0 = w.settle_time().unwrap_or(0.0).min(cfg.horizon);
    let k0 = window_start(&traj_dynamic, t0);
    let samples = sample_domain(
        model.domain(),
        settings.samples.max(MIN_CONTRACTION_SAMPLES),
        settings.seed,
    );
    let cf = estimate_contraction(model, &samples, norm)?;
    let w_snapshot = w.eval(cfg.horizon);
    let filter_lipschitz = match settings.filter_lipschitz_override {
        Some(v) => v,
        None => {
            estimate_lipschitz_s(
                spec,
                model,
                &w_snapshot,
                settings.pairs,
                settings.seed.wrapping_add(1),
                norm,
            )?
            .value
        }
    };
    let error_gain = estimate_error_gain(spec, model, &samples, norm)?;
    let drift_sup = drift_bound(model, spec, w, &traj_dynamic, k0, norm)?;
    let error_sup = traj_dynamic.error_norms[k0..]
        .iter()
        .copied()
        .fold(0.0, f64::max);

    let constants = ConstantEstimates {
        contraction_rate: cf.max,
        contraction_p95: cf.p95,
        filter_lipschitz,
        error_gain,
        input_gain: model.input_norm(norm),
        drift_sup,
        error_sup,
        epsilon: cfg.epsilon,
        norm,
        sample_count: cf.samples,
        pair_count: settings.pairs,
        seed: settings.seed,
        t0,
    };
    let tracking = tracking_bound_curve(&traj_dynamic, &constants);
    let deviation = active_time_and_deviation_curve(&traj_dynamic, &traj_static, &constants);
    let summary = VerifySummary {
        filter_lipschitz_is_lower_estimate: settings.filter_lipschitz_override.is_none(),
        tracking: BoundStatus::from_result(&tracking)?,
        deviation: BoundStatus::from_result(&deviation)?,
        constants,
    };
    Ok(VerifyOutcome {
        traj_dynamic,
        traj_static,
        tracking,
        deviation,
        summary,
    })
}
