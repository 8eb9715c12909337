//! Local derivative estimators feeding the dynamic filter.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{NetworkModel, Vector};
use crate::norms::Norm;

/// How the dynamic filter obtains `xdot_hat`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EstimatorKind {
    /// True plant derivative. Non-local; analysis and tests only.
    Exact,
    /// First-order dirty derivative with time constant `tau_d`.
    Dirty { tau_d: f64 },
    /// True derivative plus a constant `offset` on every component.
    Biased { offset: f64 },
}

impl EstimatorKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            EstimatorKind::Dirty { tau_d } if !(*tau_d > 0.0 && tau_d.is_finite()) => Err(
                Error::InvalidArgument(format!("tau_d must be positive, got {tau_d}")),
            ),
            EstimatorKind::Biased { offset } if !offset.is_finite() => Err(Error::InvalidArgument(
                "estimator offset must be finite".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Dirty derivative `rho' = (x - rho) / tau_d`, `xdot_hat = (x - rho) / tau_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirtyDerivative {
    rho: Vector,
    tau_d: f64,
}

impl DirtyDerivative {
    /// Starts at `rho = x0`, so the first estimate is zero.
    pub fn new(x0: &Vector, tau_d: f64) -> Result<Self> {
        EstimatorKind::Dirty { tau_d }.validate()?;
        Ok(Self {
            rho: x0.clone(),
            tau_d,
        })
    }

    pub fn with_state(rho: Vector, tau_d: f64) -> Result<Self> {
        EstimatorKind::Dirty { tau_d }.validate()?;
        Ok(Self { rho, tau_d })
    }

    pub fn rho(&self) -> &Vector {
        &self.rho
    }

    pub fn tau_d(&self) -> f64 {
        self.tau_d
    }

    /// Returns the estimate built from the current `rho`, then advances `rho`
    /// by one forward-Euler step.
    pub fn step(&mut self, x: &Vector, dt: f64) -> Result<Vector> {
        check_len("dirty derivative input", self.rho.len(), x.len())?;
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if dt > self.tau_d {
            log::warn!(
                "dirty derivative step dt = {dt} exceeds tau_d = {}",
                self.tau_d
            );
        }
        let innovation = x - &self.rho;
        let estimate = &innovation / self.tau_d;
        self.rho.axpy(dt / self.tau_d, &innovation, 1.0);
        Ok(estimate)
    }
}

/// `F(x) + B z + w`, the true derivative of the two-time-scale plant.
pub fn exact_derivative(
    model: &NetworkModel,
    x: &Vector,
    z: &Vector,
    w: &Vector,
) -> Result<Vector> {
    model.eval_filtered_rhs(x, z, w)
}

/// Running record of derivative-estimate errors `e = xdot_hat - xdot`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EstimateRecord {
    norm: Norm,
    error_norms: Vec<f64>,
    error_sup: f64,
}

impl EstimateRecord {
    pub fn new(norm: Norm) -> Self {
        Self {
            norm,
            error_norms: Vec::new(),
            error_sup: 0.0,
        }
    }

    /// Appends `estimate - truth` and returns it.
    pub fn record_error(&mut self, estimate: &Vector, truth: &Vector) -> Result<Vector> {
        check_len("estimate", truth.len(), estimate.len())?;
        let e = estimate - truth;
        let n = self.norm.vector(e.as_slice());
        self.error_norms.push(n);
        self.error_sup = self.error_sup.max(n);
        Ok(e)
    }

    pub fn error_norms(&self) -> &[f64] {
        &self.error_norms
    }

    /// Max of the recorded error norms (grid proxy for the essential sup).
    pub fn error_sup(&self) -> f64 {
        self.error_sup
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    #[test]
    fn constant_input_fixed_point() {
        let mut est = DirtyDerivative::new(&v(3.0), 0.05).unwrap();
        for _ in 0..100 {
            assert_eq!(est.step(&v(3.0), 1e-3).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn ramp_converges_to_slope() {
        let (dt, tau) = (1e-3, 0.01);
        let mut est = DirtyDerivative::new(&v(0.0), tau).unwrap();
        let mut last = 0.0;
        for k in 0..2000 {
            last = est.step(&v(k as f64 * dt), dt).unwrap()[0];
        }
        assert!((last - 1.0).abs() <= 1e-3);
        // Continuous-time steady state lags by tau_d.
        assert!((est.rho()[0] - (2000.0 * dt - tau)).abs() < 1e-6);
    }

    #[test]
    fn sine_tracking() {
        let (dt, tau) = (1e-4, 0.01);
        let mut est = DirtyDerivative::new(&v(0.0), tau).unwrap();
        let mut sup: f64 = 0.0;
        for k in 0..100_000 {
            let t = k as f64 * dt;
            let e = est.step(&v(t.sin()), dt).unwrap()[0];
            if t > 5.0 * tau {
                sup = sup.max((e - t.cos()).abs());
            }
        }
        assert!(sup <= 0.02, "sup error {sup}");
    }

    #[test]
    fn invalid_parameters() {
        assert!(DirtyDerivative::new(&v(0.0), 0.0).is_err());
        let mut est = DirtyDerivative::new(&v(0.0), 0.1).unwrap();
        assert!(est.step(&v(0.0), 0.0).is_err());
        assert!(est.step(&Vector::zeros(2), 1e-3).is_err());
    }

    #[test]
    fn error_record() {
        let mut rec = EstimateRecord::new(Norm::Inf);
        let truth = Vector::from_vec(vec![1.0, 1.0]);
        assert_eq!(rec.record_error(&truth, &truth).unwrap(), Vector::zeros(2));
        assert_eq!(rec.error_sup(), 0.0);
        rec.record_error(&Vector::from_vec(vec![2.0, 1.0]), &truth)
            .unwrap();
        rec.record_error(&Vector::from_vec(vec![1.0, 3.0]), &truth)
            .unwrap();
        assert_eq!(rec.error_sup(), 2.0);
        assert_eq!(rec.error_norms(), &[0.0, 1.0, 2.0]);
    }
}
