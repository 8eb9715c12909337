//! Reference QP solutions used to cross-check the closed-form filter.
//!
//! The constraint data are assembled from the filtered right-hand side rather
//! than from `margins`/`d`, and each half-space subproblem is solved either by
//! projected gradient descent or by direct Euclidean projection.

use crate::error::{Error, Result};
use crate::filter::{SafetySpec, DEGENERACY_TOL};
use crate::model::{NetworkModel, Vector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum QpMethod {
    /// Projected gradient on `|theta|^2` over the half-space.
    #[default]
    ProjectedGradient,
    /// One Euclidean projection of the origin.
    Projection,
}

pub const MAX_ITERATIONS: usize = 10_000;
pub const RESIDUAL_TOL: f64 = 1e-12;

/// Euclidean projection of `point` onto `{theta : a^T theta >= b}`.
pub fn project_halfspace(point: &Vector, a: &Vector, b: f64) -> Vector {
    let gap = b - a.dot(point);
    if gap <= 0.0 {
        return point.clone();
    }
    point + a * (gap / a.norm_squared())
}

/// Minimizes `|theta|^2` subject to `a^T theta >= b` by projected gradient
/// steps. Returns the iterate and the number of iterations used.
pub fn solve_halfspace_qp(a: &Vector, b: f64) -> Result<(Vector, usize)> {
    if a.norm() <= DEGENERACY_TOL {
        if b > 0.0 {
            return Err(Error::Infeasible { subsystem: 0 });
        }
        return Ok((Vector::zeros(a.len()), 0));
    }
    // Gradient of |theta|^2 is 2 theta (Lipschitz constant 2); step 1/4 keeps
    // the iteration a strict contraction instead of landing in one step.
    const STEP: f64 = 0.25;
    // Feasible start away from the optimum.
    let start = Vector::from_fn(a.len(), |i, _| 1.0 + i as f64);
    let mut theta = project_halfspace(&(start * (1.0 + b.abs())), a, b);
    for k in 0..MAX_ITERATIONS {
        let next = project_halfspace(&(&theta * (1.0 - 2.0 * STEP)), a, b);
        // Gradient mapping residual.
        let residual = (&theta - &next).norm() / STEP;
        theta = next;
        if residual < RESIDUAL_TOL {
            return Ok((theta, k + 1));
        }
    }
    Ok((theta, MAX_ITERATIONS))
}

/// Per-subsystem constraint `a_i^T theta_i >= b_i` of the network QP.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfSpace {
    pub a: Vector,
    pub b: f64,
}

/// Builds the constraint data from `grad h_i`, `B_i` and the uncorrected
/// filtered right-hand side. `None` for unconstrained subsystems.
pub fn constraint_data(
    spec: &SafetySpec,
    model: &NetworkModel,
    x: &Vector,
    w: &Vector,
) -> Result<Vec<Option<HalfSpace>>> {
    let layout = model.layout();
    let uncorrected = model.eval_filtered_rhs(x, &Vector::zeros(model.input_dim()), w)?;
    Ok((0..layout.count())
        .map(|i| {
            spec.barrier(i).map(|barrier| {
                let xi = layout.state_block(x, i);
                let grad = barrier.grad(&xi);
                let r = layout.state_range(i);
                let constant = grad.dot(&uncorrected.rows(r.start, r.len()))
                    + barrier.alpha().eval(barrier.h(&xi));
                HalfSpace {
                    a: model.input_block(i).transpose() * &grad,
                    b: -constant,
                }
            })
        })
        .collect())
}

/// Numerical solution of the network QP; a test oracle for the closed form.
pub fn qp_oracle(
    spec: &SafetySpec,
    model: &NetworkModel,
    x: &Vector,
    w: &Vector,
    method: QpMethod,
) -> Result<Vector> {
    let layout = model.layout();
    let mut theta = Vector::zeros(layout.input_dim());
    for (i, con) in constraint_data(spec, model, x, w)?.into_iter().enumerate() {
        let Some(HalfSpace { a, b }) = con else {
            continue;
        };
        let ti = match method {
            QpMethod::ProjectedGradient => {
                solve_halfspace_qp(&a, b)
                    .map_err(|_| Error::Infeasible { subsystem: i })?
                    .0
            }
            QpMethod::Projection => {
                if a.norm() <= DEGENERACY_TOL {
                    if b > 0.0 {
                        return Err(Error::Infeasible { subsystem: i });
                    }
                    Vector::zeros(a.len())
                } else {
                    project_halfspace(&Vector::zeros(a.len()), &a, b)
                }
            }
        };
        let c = layout.input_range(i);
        theta.rows_mut(c.start, c.len()).copy_from(&ti);
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{Barrier, ClassK};
    use crate::model::{DomainBox, SubsystemLayout};
    use nalgebra::dmatrix;

    #[test]
    fn scalar_projection() {
        let (theta, _) = solve_halfspace_qp(&Vector::from_element(1, 1.0), 1.0).unwrap();
        assert!((theta[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn inactive_constraint_gives_zero() {
        let (theta, _) = solve_halfspace_qp(&Vector::from_vec(vec![1.0, 2.0]), -3.0).unwrap();
        assert!(theta.norm() < 1e-10);
    }

    #[test]
    fn degenerate_constraint() {
        let a = Vector::zeros(2);
        assert!(matches!(
            solve_halfspace_qp(&a, 1.0),
            Err(Error::Infeasible { .. })
        ));
        assert_eq!(solve_halfspace_qp(&a, -1.0).unwrap().0, Vector::zeros(2));
    }

    #[test]
    fn iterative_matches_projection() {
        let a = Vector::from_vec(vec![0.3, -1.7]);
        let (theta, iters) = solve_halfspace_qp(&a, 2.5).unwrap();
        let direct = project_halfspace(&Vector::zeros(2), &a, 2.5);
        assert!(iters < MAX_ITERATIONS);
        assert!((theta - direct).norm() < 1e-10);
    }

    #[test]
    fn oracle_on_network() {
        let model = NetworkModel::linear(
            SubsystemLayout::uniform(1, 1, 1).unwrap(),
            dmatrix![0.0],
            vec![dmatrix![1.0]],
            None,
            DomainBox::symmetric(1, 1.0).unwrap(),
        )
        .unwrap();
        let spec = SafetySpec::new(vec![Some(Barrier::affine(
            Vector::from_element(1, 1.0),
            0.0,
            ClassK::Linear(1.0),
        ))]);
        let x = Vector::zeros(1);
        let w = Vector::from_element(1, -1.0);
        for method in [QpMethod::ProjectedGradient, QpMethod::Projection] {
            let theta = qp_oracle(&spec, &model, &x, &w, method).unwrap();
            assert!((theta[0] - 1.0).abs() < 1e-10);
        }
        // Inactive everywhere -> zero.
        let theta = qp_oracle(
            &spec,
            &model,
            &Vector::from_element(1, 2.0),
            &Vector::zeros(1),
            QpMethod::ProjectedGradient,
        )
        .unwrap();
        assert!(theta[0].abs() < 1e-10);
    }
}
