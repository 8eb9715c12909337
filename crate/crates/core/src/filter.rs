//! Closed-form CBF safety filter and its perturbed and local variants.
//!
//! With one barrier per subsystem the network QP
//!
//! ```text
//! min |theta|^2  s.t.  grad h_i^T (F_i(x) + B_i thmargin + w_i) + alpha_i(h_i) >= 0
//! ```
//!
//! separates into per-subsystem half-space projections of the origin, solved by
//! `s_i = d_i max{0, -margin}` with
//! `margin = grad h_i^T (F_i + w_i) + alpha_i(h_i)` and
//! `d_i = B_i^T grad h_i / |B_i^T grad h_i|^2`.

use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::model::{LocalFn, Matrix, NetworkModel, Vector};

/// Below this `|B_i^T grad h_i|_2` the direction `d_i` is treated as undefined.
pub const DEGENERACY_TOL: f64 = 1e-10;

pub type ScalarFn = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;

/// Extended class-K∞ function.
#[derive(Clone)]
pub enum ClassK {
    /// `alpha(s) = gain * s`, `gain > 0`.
    Linear(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl ClassK {
    pub fn linear(gain: f64) -> Result<Self> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "class-K gain must be positive, got {gain}"
            )));
        }
        Ok(ClassK::Linear(gain))
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            ClassK::Linear(g) => g * s,
            ClassK::Custom(f) => f(s),
        }
    }
}

impl std::fmt::Debug for ClassK {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClassK::Linear(g) => write!(f, "Linear({g})"),
            ClassK::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Local barrier `h_i` with its gradient and class-K gain.
#[derive(Clone)]
pub struct Barrier {
    h: ScalarFn,
    grad: LocalFn,
    alpha: ClassK,
}

impl std::fmt::Debug for Barrier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Barrier")
            .field("alpha", &self.alpha)
            .finish_non_exhaustive()
    }
}

impl Barrier {
    pub fn new(h: ScalarFn, grad: LocalFn, alpha: ClassK) -> Self {
        Self { h, grad, alpha }
    }

    /// `h(x_i) = c^T x_i + offset`.
    pub fn affine(c: Vector, offset: f64, alpha: ClassK) -> Self {
        let c2 = c.clone();
        Self {
            h: Arc::new(move |xi: &Vector| c.dot(xi) + offset),
            grad: Arc::new(move |_: &Vector| c2.clone()),
            alpha,
        }
    }

    pub fn h(&self, xi: &Vector) -> f64 {
        (self.h)(xi)
    }

    pub fn grad(&self, xi: &Vector) -> Vector {
        (self.grad)(xi)
    }

    pub fn alpha(&self) -> &ClassK {
        &self.alpha
    }

    /// `d_i(x_i) = B_i^T grad h_i / |B_i^T grad h_i|_2^2`.
    pub fn direction(&self, b_i: &Matrix, xi: &Vector) -> Result<Vector> {
        let grad = self.grad(xi);
        check_len("barrier gradient", b_i.nrows(), grad.len())?;
        direction_from_gain(b_i.tr_mul(&grad), None)
    }
}

fn direction_from_gain(gain: Vector, subsystem: Option<usize>) -> Result<Vector> {
    let sq = gain.norm_squared();
    let norm = sq.sqrt();
    if !(norm > DEGENERACY_TOL) {
        return Err(Error::WellPosedness {
            subsystem,
            gain: norm,
        });
    }
    Ok(gain / sq)
}

/// One optional barrier per subsystem. Subsystems without a barrier are never
/// corrected.
#[derive(Clone, Debug)]
pub struct SafetySpec {
    barriers: Vec<Option<Barrier>>,
}

impl SafetySpec {
    pub fn new(barriers: Vec<Option<Barrier>>) -> Self {
        Self { barriers }
    }

    pub fn count(&self) -> usize {
        self.barriers.len()
    }

    pub fn barrier(&self, i: usize) -> Option<&Barrier> {
        self.barriers[i].as_ref()
    }

    pub fn barriers(&self) -> &[Option<Barrier>] {
        &self.barriers
    }

    pub fn is_constrained(&self, i: usize) -> bool {
        self.barriers[i].is_some()
    }

    fn check(&self, model: &NetworkModel) -> Result<()> {
        check_len("safety spec", model.layout().count(), self.count())
    }
}

/// Everything the closed-form filter computes at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterEvaluation {
    /// Constraint margins; `+inf` for unconstrained subsystems.
    pub margins: Vec<f64>,
    /// `d_i`, only evaluated where the filter is active.
    pub directions: Vec<Option<Vector>>,
    /// Stacked correction.
    pub s: Vector,
    /// `margin < 0`.
    pub active: Vec<bool>,
}

impl FilterEvaluation {
    pub fn any_active(&self) -> bool {
        self.active.iter().any(|a| *a)
    }
}

/// `margin(x) = grad h_i^T (F_i(x) + w_i) + alpha_i(h_i(x_i))` for every
/// subsystem.
pub fn eval_margins(
    spec: &SafetySpec,
    model: &NetworkModel,
    x: &Vector,
    w: &Vector,
) -> Result<Vec<f64>> {
    spec.check(model)?;
    check_len("disturbance", model.state_dim(), w.len())?;
    let drift = model.eval_nominal_closed_loop(x)? + w;
    Ok(margins_from_drift(spec, model, x, &drift))
}

fn margins_from_drift(
    spec: &SafetySpec,
    model: &NetworkModel,
    x: &Vector,
    drift: &Vector,
) -> Vec<f64> {
    let layout = model.layout();
    (0..layout.count())
        .map(|i| match spec.barrier(i) {
            None => f64::INFINITY,
            Some(b) => {
                let xi = layout.state_block(x, i);
                let r = layout.state_range(i);
                let grad = b.grad(&xi);
                grad.dot(&drift.rows(r.start, r.len())) + b.alpha().eval(b.h(&xi))
            }
        })
        .collect()
}

/// `d_i` for a single subsystem; fails when `B_i^T grad h_i` vanishes.
pub fn eval_direction(barrier: &Barrier, b_i: &Matrix, xi: &Vector) -> Result<Vector> {
    barrier.direction(b_i, xi)
}

/// Closed-form solution of the network QP.
pub fn static_filter(
    spec: &SafetySpec,
    model: &NetworkModel,
    x: &Vector,
    w: &Vector,
) -> Result<FilterEvaluation> {
    spec.check(model)?;
    check_len("disturbance", model.state_dim(), w.len())?;
    let drift = model.eval_nominal_closed_loop(x)? + w;
    static_filter_from_drift(spec, model, x, &drift)
}

/// Same as [`static_filter`] with `F(x) + w` already evaluated.
pub fn static_filter_from_drift(
    spec: &SafetySpec,
    model: &NetworkModel,
    x: &Vector,
    drift: &Vector,
) -> Result<FilterEvaluation> {
    spec.check(model)?;
    check_len("drift", model.state_dim(), drift.len())?;
    let margins = margins_from_drift(spec, model, x, drift);
    corrections_from_margins(spec, model, x, margins)
}

fn corrections_from_margins(
    spec: &SafetySpec,
    model: &NetworkModel,
    x: &Vector,
    margins: Vec<f64>,
) -> Result<FilterEvaluation> {
    let layout = model.layout();
    let mut s = Vector::zeros(layout.input_dim());
    let mut directions = vec![None; layout.count()];
    let mut active = vec![false; layout.count()];
    for i in 0..layout.count() {
        if !(margins[i] < 0.0) {
            continue;
        }
        let barrier = spec.barrier(i).expect("a finite margin implies a barrier");
        let xi = layout.state_block(x, i);
        let gain = model.input_block(i).tr_mul(&barrier.grad(&xi));
        let d = direction_from_gain(gain, Some(i))?;
        let c = layout.input_range(i);
        s.rows_mut(c.start, c.len()).copy_from(&(&d * -margins[i]));
        directions[i] = Some(d);
        active[i] = true;
    }
    Ok(FilterEvaluation {
        margins,
        directions,
        s,
        active,
    })
}

/// Correction obtained when the margins are computed with a derivative error
/// `e`: `s_e,i = d_i max{0, -margin - grad h_i^T e_i}`.
pub fn perturbed_static_filter(
    spec: &SafetySpec,
    model: &NetworkModel,
    x: &Vector,
    w: &Vector,
    e: &Vector,
) -> Result<Vector> {
    check_len("estimate error", model.state_dim(), e.len())?;
    let mut margins = eval_margins(spec, model, x, w)?;
    let layout = model.layout();
    for (i, margin) in margins.iter_mut().enumerate() {
        if let Some(b) = spec.barrier(i) {
            let r = layout.state_range(i);
            let xi = layout.state_block(x, i);
            *margin += b.grad(&xi).dot(&e.rows(r.start, r.len()));
        }
    }
    Ok(corrections_from_margins(spec, model, x, margins)?.s)
}

/// Local target of the fast filter state:
/// `d_i max{0, -(grad h_i^T (xdot_hat_i - B_i z_i) + alpha_i(h_i))}`.
///
/// Only subsystem-local quantities enter.
pub fn dynamic_filter_target(
    barrier: &Barrier,
    b_i: &Matrix,
    xi: &Vector,
    zi: &Vector,
    xdot_hat_i: &Vector,
) -> Result<Vector> {
    check_len("local state", b_i.nrows(), xi.len())?;
    check_len("local fast state", b_i.ncols(), zi.len())?;
    check_len("local derivative estimate", b_i.nrows(), xdot_hat_i.len())?;
    let grad = barrier.grad(xi);
    let margin_est = grad.dot(&(xdot_hat_i - b_i * zi)) + barrier.alpha().eval(barrier.h(xi));
    if !(margin_est < 0.0) {
        return Ok(Vector::zeros(b_i.ncols()));
    }
    let d = direction_from_gain(b_i.tr_mul(&grad), None)?;
    Ok(d * -margin_est)
}

/// Result of sampling the well-posedness conditions.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct WellPosednessReport {
    /// Smallest `|B_i^T grad h_i|` over samples with `|h_i| < boundary_band`.
    pub min_gain_near_boundary: Vec<Option<f64>>,
    pub samples: usize,
    pub samples_near_boundary: usize,
    /// Samples at which some active subsystem had a degenerate direction.
    pub unsolvable_samples: usize,
    pub passed: bool,
}

/// Checks that `B_i^T grad h_i` stays away from zero near every boundary
/// `h_i = 0`, and that the QP can be solved at each sample.
pub fn check_wellposed(
    spec: &SafetySpec,
    model: &NetworkModel,
    w: &Vector,
    samples: &[Vector],
    boundary_band: f64,
) -> Result<WellPosednessReport> {
    spec.check(model)?;
    let layout = model.layout();
    let mut min_gain: Vec<Option<f64>> = vec![None; layout.count()];
    let mut near = 0;
    let mut unsolvable = 0;
    for x in samples {
        let margins = eval_margins(spec, model, x, w)?;
        let mut any_near = false;
        let mut solvable = true;
        for i in 0..layout.count() {
            let Some(b) = spec.barrier(i) else { continue };
            let xi = layout.state_block(x, i);
            let gain = model.input_block(i).tr_mul(&b.grad(&xi)).norm();
            if b.h(&xi).abs() < boundary_band {
                any_near = true;
                min_gain[i] = Some(min_gain[i].map_or(gain, |g: f64| g.min(gain)));
            }
            if margins[i] < 0.0 && !(gain > DEGENERACY_TOL) {
                solvable = false;
            }
        }
        near += usize::from(any_near);
        unsolvable += usize::from(!solvable);
    }
    let passed = unsolvable == 0
        && min_gain
            .iter()
            .all(|g| g.is_none_or(|g| g > DEGENERACY_TOL));
    Ok(WellPosednessReport {
        min_gain_near_boundary: min_gain,
        samples: samples.len(),
        samples_near_boundary: near,
        unsolvable_samples: unsolvable,
        passed,
    })
}
