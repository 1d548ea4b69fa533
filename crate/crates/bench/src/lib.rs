//! Fixtures shared by the benchmarks.

use infogap_core::dist::{dirichlet_row, CondTable};
use infogap_core::model::train::onehot_inputs;
use infogap_core::sgd::{Landscape, LandscapeSpec};
use infogap_core::{Activation, Arch, Matrix, ModelState, RngStream};
use rand::Rng;

/// Random symmetric `n × n` matrix with entries in `[-1, 1)`.
pub fn symmetric(n: usize, seed: u64) -> Matrix {
    let mut rng = RngStream::new(seed, 0);
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-1.0..1.0);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    m
}

/// Onehot-input policy with one hidden layer and a random conditional table
/// of matching shape.
pub fn policy(nx: usize, ny: usize, hidden: usize, seed: u64) -> (ModelState, Vec<Vec<f64>>, CondTable) {
    let mut rng = RngStream::new(seed, 1);
    let arch = Arch::mlp(nx, &[hidden], Activation::Tanh, ny);
    let m = ModelState::init(arch, &mut rng).expect("valid architecture");
    let rows = (0..nx)
        .map(|_| dirichlet_row(ny, &mut rng).expect("nonempty row"))
        .collect();
    let t = CondTable::from_rows(rows).expect("valid table");
    (m, onehot_inputs(nx), t)
}

/// Double well with `H_min = 2`, `|H_saddle| = 1`.
pub fn double_well(barrier: f64) -> Landscape {
    Landscape::new(LandscapeSpec::DoubleWell {
        barrier,
        h_min: 2.0,
        h_saddle: 1.0,
        transverse: 1.0,
        dim: 2,
        noise_scale: 1.0,
    })
    .expect("valid landscape")
}
