//! Networked dynamics `x_i' = f_i(x) + B_i u_i + w_i` with local nominal
//! controllers `u_i = kappa_i(x_i)`.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::norms::Norm;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Full-state vector field `x -> f(x)`.
pub type FieldFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
/// Subsystem-local map `x_i -> y`.
pub type LocalFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;

/// Dimensions of the subsystems and where their blocks live in the stacked
/// state and input vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsystemLayout {
    state_dims: Vec<usize>,
    input_dims: Vec<usize>,
    state_offsets: Vec<usize>,
    input_offsets: Vec<usize>,
}

fn prefix_sums(dims: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(dims.len() + 1);
    out.push(0);
    for d in dims {
        out.push(out.last().unwrap() + d);
    }
    out
}

impl SubsystemLayout {
    pub fn new(state_dims: Vec<usize>, input_dims: Vec<usize>) -> Result<Self> {
        if state_dims.is_empty() {
            return Err(Error::InvalidArgument(
                "layout needs at least one subsystem".into(),
            ));
        }
        check_len("input_dims", state_dims.len(), input_dims.len())?;
        if state_dims.iter().chain(&input_dims).any(|&d| d == 0) {
            return Err(Error::InvalidArgument(
                "subsystem dimensions must be positive".into(),
            ));
        }
        Ok(Self {
            state_offsets: prefix_sums(&state_dims),
            input_offsets: prefix_sums(&input_dims),
            state_dims,
            input_dims,
        })
    }

    /// `count` identical subsystems.
    pub fn uniform(count: usize, state_dim: usize, input_dim: usize) -> Result<Self> {
        Self::new(vec![state_dim; count], vec![input_dim; count])
    }

    pub fn count(&self) -> usize {
        self.state_dims.len()
    }

    pub fn state_dim(&self) -> usize {
        *self.state_offsets.last().unwrap()
    }

    pub fn input_dim(&self) -> usize {
        *self.input_offsets.last().unwrap()
    }

    pub fn state_dims(&self) -> &[usize] {
        &self.state_dims
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn state_offsets(&self) -> &[usize] {
        &self.state_offsets
    }

    pub fn input_offsets(&self) -> &[usize] {
        &self.input_offsets
    }

    pub fn state_range(&self, i: usize) -> Range<usize> {
        self.state_offsets[i]..self.state_offsets[i + 1]
    }

    pub fn input_range(&self, i: usize) -> Range<usize> {
        self.input_offsets[i]..self.input_offsets[i + 1]
    }

    /// Copy of the state block of subsystem `i`.
    pub fn state_block(&self, x: &Vector, i: usize) -> Vector {
        let r = self.state_range(i);
        Vector::from_column_slice(&x.as_slice()[r])
    }

    pub fn input_block(&self, u: &Vector, i: usize) -> Vector {
        let r = self.input_range(i);
        Vector::from_column_slice(&u.as_slice()[r])
    }

    pub fn split_state(&self, x: &Vector) -> Result<Vec<Vector>> {
        check_len("state", self.state_dim(), x.len())?;
        Ok((0..self.count()).map(|i| self.state_block(x, i)).collect())
    }

    pub fn stack_state(&self, blocks: &[Vector]) -> Result<Vector> {
        check_len("state blocks", self.count(), blocks.len())?;
        let mut out = Vector::zeros(self.state_dim());
        for (i, b) in blocks.iter().enumerate() {
            let r = self.state_range(i);
            check_len("state block", r.len(), b.len())?;
            out.rows_mut(r.start, r.len()).copy_from(b);
        }
        Ok(out)
    }
}

/// Axis-aligned compact box used to sample states for constant estimation and
/// to police simulations.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len("domain upper bound", lower.len(), upper.len())?;
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u))
        {
            return Err(Error::InvalidArgument(
                "domain box needs finite bounds with lower < upper".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    /// The box `[-r, r]^n`.
    pub fn symmetric(n: usize, radius: f64) -> Result<Self> {
        Self::new(vec![-radius; n], vec![radius; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Euclidean length of the box diagonal.
    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    /// First coordinate lying further than `fraction` of the box width outside
    /// the box.
    pub fn excursion(&self, x: &[f64], fraction: f64) -> Option<usize> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .position(|(v, (l, u))| {
                let slack = fraction * (u - l);
                !(*v >= l - slack && *v <= u + slack)
            })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        Vector::from_iterator(
            self.dim(),
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(l, u)| l + (u - l) * rng.random::<f64>()),
        )
    }
}

/// The networked plant together with its nominal controllers.
///
/// Models are immutable once built and can be shared across simulation
/// workers.
#[derive(Clone)]
pub struct NetworkModel {
    layout: SubsystemLayout,
    coupling: FieldFn,
    input_blocks: Vec<Matrix>,
    nominal: Vec<Option<LocalFn>>,
    domain: DomainBox,
}

impl std::fmt::Debug for NetworkModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NetworkModel")
            .field("layout", &self.layout)
            .field("input_blocks", &self.input_blocks)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl NetworkModel {
    /// `nominal[i] = None` means `kappa_i = 0`.
    pub fn new(
        layout: SubsystemLayout,
        coupling: FieldFn,
        input_blocks: Vec<Matrix>,
        nominal: Vec<Option<LocalFn>>,
        domain: DomainBox,
    ) -> Result<Self> {
        check_len("input blocks", layout.count(), input_blocks.len())?;
        check_len("nominal controllers", layout.count(), nominal.len())?;
        check_len("domain box", layout.state_dim(), domain.dim())?;
        for (i, b) in input_blocks.iter().enumerate() {
            if b.nrows() != layout.state_dims()[i] || b.ncols() != layout.input_dims()[i] {
                return Err(Error::InvalidArgument(format!(
                    "input block {i} is {}x{}, layout wants {}x{}",
                    b.nrows(),
                    b.ncols(),
                    layout.state_dims()[i],
                    layout.input_dims()[i]
                )));
            }
        }
        Ok(Self {
            layout,
            coupling,
            input_blocks,
            nominal,
            domain,
        })
    }

    /// `x' = A x + B u` with `u_i = K_i x_i`, for tests and custom networks.
    pub fn linear(
        layout: SubsystemLayout,
        a: Matrix,
        input_blocks: Vec<Matrix>,
        gains: Option<Vec<Matrix>>,
        domain: DomainBox,
    ) -> Result<Self> {
        let n = layout.state_dim();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "coupling matrix must be {n}x{n}, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let nominal = match gains {
            None => vec![None; layout.count()],
            Some(gains) => {
                check_len("feedback gains", layout.count(), gains.len())?;
                gains
                    .into_iter()
                    .enumerate()
                    .map(|(i, k)| {
                        if k.nrows() != layout.input_dims()[i]
                            || k.ncols() != layout.state_dims()[i]
                        {
                            return Err(Error::InvalidArgument(format!(
                                "gain {i} has wrong shape"
                            )));
                        }
                        let f: LocalFn = Arc::new(move |xi: &Vector| &k * xi);
                        Ok(Some(f))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let coupling: FieldFn = Arc::new(move |x: &Vector| &a * x);
        Self::new(layout, coupling, input_blocks, nominal, domain)
    }

    pub fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    pub fn state_dim(&self) -> usize {
        self.layout.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim()
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn with_domain(mut self, domain: DomainBox) -> Result<Self> {
        check_len("domain box", self.state_dim(), domain.dim())?;
        self.domain = domain;
        Ok(self)
    }

    pub fn input_block(&self, i: usize) -> &Matrix {
        &self.input_blocks[i]
    }

    pub fn input_blocks(&self) -> &[Matrix] {
        &self.input_blocks
    }

    /// Dense block-diagonal `B`.
    pub fn input_matrix(&self) -> Matrix {
        let mut b = Matrix::zeros(self.state_dim(), self.input_dim());
        for (i, blk) in self.input_blocks.iter().enumerate() {
            let r = self.layout.state_range(i);
            let c = self.layout.input_range(i);
            b.view_mut((r.start, c.start), (r.len(), c.len()))
                .copy_from(blk);
        }
        b
    }

    /// Induced norm of `B`; for a block-diagonal matrix this is the largest
    /// block norm.
    pub fn input_norm(&self, norm: Norm) -> f64 {
        self.input_blocks
            .iter()
            .map(|b| norm.induced(b))
            .fold(0.0, f64::max)
    }

    /// `f(x)`.
    pub fn eval_coupling(&self, x: &Vector) -> Result<Vector> {
        check_len("state", self.state_dim(), x.len())?;
        let f = (self.coupling)(x);
        check_len("coupling output", self.state_dim(), f.len())?;
        Ok(f)
    }

    /// `B u`; block `i` of the result only depends on `u_i`.
    pub fn apply_input(&self, u: &Vector) -> Result<Vector> {
        check_len("input", self.input_dim(), u.len())?;
        let mut out = Vector::zeros(self.state_dim());
        for (i, blk) in self.input_blocks.iter().enumerate() {
            let r = self.layout.state_range(i);
            let c = self.layout.input_range(i);
            let ui = u.rows(c.start, c.len());
            out.rows_mut(r.start, r.len()).gemv(1.0, blk, &ui, 0.0);
        }
        Ok(out)
    }

    /// Stacked nominal inputs `kappa(x)`.
    pub fn eval_nominal_input(&self, x: &Vector) -> Result<Vector> {
        check_len("state", self.state_dim(), x.len())?;
        let mut u = Vector::zeros(self.input_dim());
        for (i, kappa) in self.nominal.iter().enumerate() {
            if let Some(kappa) = kappa {
                let ki = kappa(&self.layout.state_block(x, i));
                let c = self.layout.input_range(i);
                check_len("nominal controller output", c.len(), ki.len())?;
                u.rows_mut(c.start, c.len()).copy_from(&ki);
            }
        }
        Ok(u)
    }

    /// Nominal closed loop `F(x) = f(x) + B kappa(x)`.
    pub fn eval_nominal_closed_loop(&self, x: &Vector) -> Result<Vector> {
        let mut out = self.eval_coupling(x)?;
        if self.nominal.iter().any(Option::is_some) {
            out += self.apply_input(&self.eval_nominal_input(x)?)?;
        }
        Ok(out)
    }

    /// `F(x) + B correction + w`.
    pub fn eval_filtered_rhs(&self, x: &Vector, correction: &Vector, w: &Vector) -> Result<Vector> {
        check_len("disturbance", self.state_dim(), w.len())?;
        let mut out = self.eval_nominal_closed_loop(x)?;
        out += self.apply_input(correction)?;
        out += w;
        Ok(out)
    }
}

#[derive(Clone)]
enum DisturbanceKind {
    Constant(Vector),
    Step {
        onset: f64,
        value: Vector,
    },
    Custom {
        eval: Arc<dyn Fn(f64) -> Vector + Send + Sync>,
        bound: f64,
    },
}

/// Exogenous input `t -> w(t)`.
#[derive(Clone)]
pub struct DisturbanceSignal {
    dim: usize,
    kind: DisturbanceKind,
}

impl std::fmt::Debug for DisturbanceSignal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.kind {
            DisturbanceKind::Constant(_) => "constant",
            DisturbanceKind::Step { .. } => "step",
            DisturbanceKind::Custom { .. } => "custom",
        };
        f.debug_struct("DisturbanceSignal")
            .field("dim", &self.dim)
            .field("kind", &kind)
            .finish()
    }
}

impl DisturbanceSignal {
    pub fn zero(dim: usize) -> Self {
        Self::constant(Vector::zeros(dim))
    }

    pub fn constant(value: Vector) -> Self {
        Self {
            dim: value.len(),
            kind: DisturbanceKind::Constant(value),
        }
    }

    /// Zero before `onset`, `value` from `onset` on.
    pub fn step(onset: f64, value: Vector) -> Self {
        Self {
            dim: value.len(),
            kind: DisturbanceKind::Step { onset, value },
        }
    }

    /// Arbitrary signal; `bound` must dominate `|w(t)|_2` on the horizon.
    pub fn custom(dim: usize, bound: f64, eval: Arc<dyn Fn(f64) -> Vector + Send + Sync>) -> Self {
        Self {
            dim,
            kind: DisturbanceKind::Custom { eval, bound },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64) -> Vector {
        match &self.kind {
            DisturbanceKind::Constant(v) => v.clone(),
            DisturbanceKind::Step { onset, value } => {
                if t >= *onset {
                    value.clone()
                } else {
                    Vector::zeros(self.dim)
                }
            }
            DisturbanceKind::Custom { eval, .. } => eval(t),
        }
    }

    /// Time after which the signal is constant, if it has one.
    pub fn settle_time(&self) -> Option<f64> {
        match &self.kind {
            DisturbanceKind::Constant(_) => Some(0.0),
            DisturbanceKind::Step { onset, .. } => Some(*onset),
            DisturbanceKind::Custom { .. } => None,
        }
    }

    /// Essential sup of `|w(t)|` over any horizon.
    pub fn essential_bound(&self, norm: Norm) -> f64 {
        match &self.kind {
            DisturbanceKind::Constant(v) | DisturbanceKind::Step { value: v, .. } => {
                norm.vector(v.as_slice())
            }
            // |v|_inf <= |v|_2, so the 2-norm bound serves both.
            DisturbanceKind::Custom { bound, .. } => *bound,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn two_by_two() -> NetworkModel {
        let layout = SubsystemLayout::new(vec![1, 2], vec![1, 1]).unwrap();
        let a = dmatrix![
            -1.0, 0.5, 0.0;
            0.2, -2.0, 1.0;
            0.0, 0.3, -1.5
        ];
        NetworkModel::linear(
            layout,
            a,
            vec![dmatrix![2.0], dmatrix![1.0; -1.0]],
            None,
            DomainBox::symmetric(3, 1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn layout_offsets() {
        let l = SubsystemLayout::new(vec![2, 1, 3], vec![1, 2, 1]).unwrap();
        assert_eq!(l.state_dim(), 6);
        assert_eq!(l.input_dim(), 4);
        assert_eq!(l.state_offsets(), &[0, 2, 3, 6]);
        assert_eq!(l.input_range(1), 1..3);
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(SubsystemLayout::new(vec![1, 0], vec![1, 1]).is_err());
        assert!(SubsystemLayout::new(vec![], vec![]).is_err());
        assert!(SubsystemLayout::new(vec![1], vec![1, 1]).is_err());
    }

    #[test]
    fn zero_coupling() {
        let layout = SubsystemLayout::uniform(2, 2, 1).unwrap();
        let m = NetworkModel::new(
            layout,
            Arc::new(|x: &Vector| Vector::zeros(x.len())),
            vec![Matrix::zeros(2, 1), Matrix::zeros(2, 1)],
            vec![None, None],
            DomainBox::symmetric(4, 1.0).unwrap(),
        )
        .unwrap();
        let x = Vector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        assert_eq!(m.eval_coupling(&x).unwrap(), Vector::zeros(4));
    }

    #[test]
    fn linear_coupling_first_column() {
        let m = two_by_two();
        let e1 = Vector::from_vec(vec![1.0, 0.0, 0.0]);
        assert_eq!(
            m.eval_coupling(&e1).unwrap(),
            Vector::from_vec(vec![-1.0, 0.2, 0.0])
        );
    }

    #[test]
    fn nominal_equals_coupling_without_controller() {
        let m = two_by_two();
        let x = Vector::from_vec(vec![0.3, -0.1, 0.7]);
        assert_eq!(
            m.eval_nominal_closed_loop(&x).unwrap(),
            m.eval_coupling(&x).unwrap()
        );
    }

    #[test]
    fn linear_feedback() {
        let layout = SubsystemLayout::uniform(3, 1, 1).unwrap();
        let m = NetworkModel::linear(
            layout,
            Matrix::zeros(3, 3),
            vec![dmatrix![1.0]; 3],
            Some(vec![dmatrix![-1.0]; 3]),
            DomainBox::symmetric(3, 1.0).unwrap(),
        )
        .unwrap();
        let x = Vector::from_vec(vec![0.5, -0.25, 2.0]);
        assert_eq!(m.eval_nominal_closed_loop(&x).unwrap(), -&x);
    }

    #[test]
    fn scalar_filtered_rhs() {
        let layout = SubsystemLayout::uniform(1, 1, 1).unwrap();
        let m = NetworkModel::linear(
            layout,
            dmatrix![-1.0],
            vec![dmatrix![1.0]],
            None,
            DomainBox::symmetric(1, 5.0).unwrap(),
        )
        .unwrap();
        let out = m
            .eval_filtered_rhs(
                &Vector::from_element(1, 1.0),
                &Vector::from_element(1, 2.0),
                &Vector::from_element(1, 0.5),
            )
            .unwrap();
        assert_eq!(out[0], 1.5);
    }

    #[test]
    fn dimension_errors() {
        let m = two_by_two();
        assert!(matches!(
            m.eval_coupling(&Vector::zeros(2)),
            Err(Error::Dimension { .. })
        ));
        assert!(m
            .eval_filtered_rhs(&Vector::zeros(3), &Vector::zeros(3), &Vector::zeros(3))
            .is_err());
    }

    #[test]
    fn dense_input_matrix_is_block_diagonal() {
        let m = two_by_two();
        let b = m.input_matrix();
        assert_eq!(b, dmatrix![2.0, 0.0; 0.0, 1.0; 0.0, -1.0]);
        assert!((m.input_norm(Norm::Two) - 2.0).abs() < 1e-12);
        assert_eq!(m.input_norm(Norm::Inf), 2.0);
    }

    #[test]
    fn step_disturbance() {
        let w = DisturbanceSignal::step(1.0, Vector::from_vec(vec![0.0, -3.0]));
        assert_eq!(w.eval(0.999), Vector::zeros(2));
        assert_eq!(w.eval(1.0)[1], -3.0);
        assert_eq!(w.essential_bound(Norm::Inf), 3.0);
    }

    #[test]
    fn box_excursion() {
        let b = DomainBox::symmetric(2, 1.0).unwrap();
        assert_eq!(b.excursion(&[1.1, 0.0], 0.1), None);
        assert_eq!(b.excursion(&[0.0, -1.3], 0.1), Some(1));
        assert!((b.diameter() - 8.0_f64.sqrt()).abs() < 1e-15);
    }
}
