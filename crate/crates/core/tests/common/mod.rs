#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use netcbf::filter::{Barrier, ClassK, SafetySpec};
use netcbf::{DomainBox, Matrix, NetworkModel, SubsystemLayout, Vector};

/// Random linear network with affine barriers, `n_i <= 3`, `m_i <= 2`, plus a
/// state and disturbance at which every active subsystem is well posed.
pub struct Instance {
    pub model: NetworkModel,
    pub spec: SafetySpec,
    pub x: Vector,
    pub w: Vector,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn uniform_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vector {
    Vector::from_fn(len, |_, _| rng.random_range(-scale..scale))
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(1..=4);
    let state_dims: Vec<usize> = (0..count).map(|_| rng.random_range(1..=3)).collect();
    let input_dims: Vec<usize> = (0..count).map(|_| rng.random_range(1..=2)).collect();
    let layout = SubsystemLayout::new(state_dims.clone(), input_dims.clone()).unwrap();
    let n = layout.state_dim();
    let a = uniform_matrix(&mut rng, n, n, 2.0);
    let mut blocks = Vec::new();
    let mut barriers = Vec::new();
    for i in 0..count {
        // Leave some subsystems unconstrained.
        let constrained = i == 0 || rng.random_bool(0.8);
        loop {
            let b = uniform_matrix(&mut rng, state_dims[i], input_dims[i], 1.5);
            let c = uniform_vector(&mut rng, state_dims[i], 1.0);
            if (b.transpose() * &c).norm() > 0.1 {
                blocks.push(b);
                barriers.push(constrained.then(|| {
                    let offset = rng.random_range(-0.5..0.5);
                    let gain = rng.random_range(0.5..5.0);
                    Barrier::affine(c, offset, ClassK::linear(gain).unwrap())
                }));
                break;
            }
        }
    }
    let gains: Vec<Matrix> = (0..count)
        .map(|i| uniform_matrix(&mut rng, input_dims[i], state_dims[i], 1.0))
        .collect();
    let model = NetworkModel::linear(
        layout,
        a,
        blocks,
        Some(gains),
        DomainBox::symmetric(n, 3.0).unwrap(),
    )
    .unwrap();
    Instance {
        model,
        spec: SafetySpec::new(barriers),
        x: uniform_vector(&mut rng, n, 2.0),
        w: uniform_vector(&mut rng, n, 2.0),
    }
}

pub fn random_square(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    uniform_matrix(rng, n, n, 3.0)
}
