//! Shipped scenarios: the scalar toy system, linear custom networks described
//! in config files, and the IEEE 14-bus case.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{Barrier, ClassK, SafetySpec};
use crate::grid::{build_ieee14, violation_metric, GridOverrides, GridParams, ViolationSeries};
use crate::model::{DisturbanceSignal, DomainBox, Matrix, NetworkModel, SubsystemLayout, Vector};
use crate::sim::Trajectory;

/// `x' = a x + z + w` with barrier `h = x` and `alpha(s) = gain * s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyParams {
    pub drift: f64,
    pub cbf_gain: f64,
    pub disturbance: f64,
    pub x0: f64,
    pub domain_radius: f64,
}

impl Default for ToyParams {
    /// `F = -x`, `alpha = 3`, `w = -2`, `x(0) = 2`. The filter is
    /// `s = max{0, 2 - 2x}`, active once `x < 1`.
    fn default() -> Self {
        Self {
            drift: -1.0,
            cbf_gain: 3.0,
            disturbance: -2.0,
            x0: 2.0,
            domain_radius: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineBarrierSpec {
    pub subsystem: usize,
    /// `h_i(x_i) = c^T x_i + offset`.
    pub c: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DisturbanceSpec {
    Zero,
    Constant { value: Vec<f64> },
    Step { onset: f64, value: Vec<f64> },
}

/// Linear network `x' = A x + B (K x + u) + w` with affine barriers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub state_dims: Vec<usize>,
    pub input_dims: Vec<usize>,
    /// Rows of `A`.
    pub coupling: Vec<Vec<f64>>,
    /// Rows of each `B_i`.
    pub input_blocks: Vec<Vec<Vec<f64>>>,
    /// Rows of each local feedback gain `K_i`.
    #[serde(default)]
    pub gains: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub barriers: Vec<AffineBarrierSpec>,
    pub domain_lower: Vec<f64>,
    pub domain_upper: Vec<f64>,
    pub disturbance: DisturbanceSpec,
    pub x0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScenarioConfig {
    ToyScalar {
        #[serde(default)]
        toy: ToyParams,
    },
    CustomNetwork {
        network: NetworkSpec,
    },
    Ieee14 {
        #[serde(default)]
        grid: GridOverrides,
    },
}

impl ScenarioConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ToyScalar { .. } => "toy-scalar",
            Self::CustomNetwork { .. } => "custom-network",
            Self::Ieee14 { .. } => "ieee14",
        }
    }

    pub fn build(&self) -> Result<Scenario> {
        match self {
            Self::ToyScalar { toy } => toy_scalar(toy),
            Self::CustomNetwork { network } => custom_network(network),
            Self::Ieee14 { grid } => ieee14(grid),
        }
    }
}

/// A fully assembled experiment plant.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub model: NetworkModel,
    pub spec: SafetySpec,
    pub disturbance: DisturbanceSignal,
    pub x0: Vector,
    /// Present for the grid case; enables frequency outputs.
    pub grid: Option<GridParams>,
}

impl Scenario {
    /// Frequency violation in Hz for the grid case, barrier violation
    /// otherwise.
    pub fn violation(&self, traj: &Trajectory) -> ViolationSeries {
        match &self.grid {
            Some(params) => violation_metric(traj, params),
            None => barrier_violation(traj, &self.spec, &self.model),
        }
    }
}

/// `v(t_k) = max_i max{0, -h_i(x_i(t_k))}` over the constrained subsystems.
pub fn barrier_violation(
    traj: &Trajectory,
    spec: &SafetySpec,
    model: &NetworkModel,
) -> ViolationSeries {
    let layout = model.layout();
    let values = traj
        .states
        .iter()
        .map(|x| {
            (0..layout.count())
                .filter_map(|i| {
                    spec.barrier(i)
                        .map(|b| (-b.h(&layout.state_block(x, i))).max(0.0))
                })
                .fold(0.0, f64::max)
        })
        .collect();
    ViolationSeries::from_values(traj.times.clone(), values)
}

pub fn toy_scalar(p: &ToyParams) -> Result<Scenario> {
    let model = NetworkModel::linear(
        SubsystemLayout::uniform(1, 1, 1)?,
        Matrix::from_element(1, 1, p.drift),
        vec![Matrix::from_element(1, 1, 1.0)],
        None,
        DomainBox::symmetric(1, p.domain_radius)?,
    )?;
    let spec = SafetySpec::new(vec![Some(Barrier::affine(
        Vector::from_element(1, 1.0),
        0.0,
        ClassK::linear(p.cbf_gain)?,
    ))]);
    Ok(Scenario {
        name: "toy-scalar".into(),
        model,
        spec,
        disturbance: DisturbanceSignal::constant(Vector::from_element(1, p.disturbance)),
        x0: Vector::from_element(1, p.x0),
        grid: None,
    })
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!(
            "{what} must be a non-empty rectangular matrix"
        )));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn custom_network(net: &NetworkSpec) -> Result<Scenario> {
    let layout = SubsystemLayout::new(net.state_dims.clone(), net.input_dims.clone())?;
    let a = matrix_from_rows(&net.coupling, "coupling")?;
    let blocks = net
        .input_blocks
        .iter()
        .enumerate()
        .map(|(i, b)| matrix_from_rows(b, &format!("input block {i}")))
        .collect::<Result<Vec<_>>>()?;
    let gains = net
        .gains
        .as_ref()
        .map(|gs| {
            gs.iter()
                .enumerate()
                .map(|(i, g)| matrix_from_rows(g, &format!("gain {i}")))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let domain = DomainBox::new(net.domain_lower.clone(), net.domain_upper.clone())?;
    let model = NetworkModel::linear(layout.clone(), a, blocks, gains, domain)?;

    let mut barriers: Vec<Option<Barrier>> = vec![None; layout.count()];
    for b in &net.barriers {
        if b.subsystem >= layout.count() {
            return Err(Error::Config(format!(
                "barrier on missing subsystem {}",
                b.subsystem
            )));
        }
        if b.c.len() != layout.state_dims()[b.subsystem] {
            return Err(Error::Config(format!(
                "barrier on subsystem {} needs {} coefficients",
                b.subsystem,
                layout.state_dims()[b.subsystem]
            )));
        }
        if barriers[b.subsystem].is_some() {
            return Err(Error::Config(format!(
                "subsystem {} has two barriers",
                b.subsystem
            )));
        }
        barriers[b.subsystem] = Some(Barrier::affine(
            Vector::from_vec(b.c.clone()),
            b.offset,
            ClassK::linear(b.alpha)?,
        ));
    }
    let n = layout.state_dim();
    let check = |v: &[f64], what: &str| {
        if v.len() == n {
            Ok(Vector::from_vec(v.to_vec()))
        } else {
            Err(Error::Config(format!(
                "{what} needs {n} entries, got {}",
                v.len()
            )))
        }
    };
    let disturbance = match &net.disturbance {
        DisturbanceSpec::Zero => DisturbanceSignal::zero(n),
        DisturbanceSpec::Constant { value } => {
            DisturbanceSignal::constant(check(value, "disturbance")?)
        }
        DisturbanceSpec::Step { onset, value } => {
            DisturbanceSignal::step(*onset, check(value, "disturbance")?)
        }
    };
    Ok(Scenario {
        name: "custom-network".into(),
        model,
        spec: SafetySpec::new(barriers),
        disturbance,
        x0: check(&net.x0, "x0")?,
        grid: None,
    })
}

/// Grid case at the pre-disturbance equilibrium `x(0) = 0`.
pub fn ieee14(overrides: &GridOverrides) -> Result<Scenario> {
    let case = build_ieee14(GridParams::ieee14_with(overrides)?)?;
    let n = case.model.state_dim();
    Ok(Scenario {
        name: "ieee14".into(),
        model: case.model,
        spec: case.spec,
        disturbance: case.disturbance,
        x0: Vector::zeros(n),
        grid: Some(case.params),
    })
}
