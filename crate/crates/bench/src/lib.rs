//! Deterministic inputs shared by the benchmarks.

use elastlab::data::{seeded_rng, standard_normal};
use elastlab::linalg::SymEigen;
use elastlab::mlp::{Head, MlpNet};
use elastlab::{Matrix, Vector};

/// Random symmetric positive-definite `n x n` matrix `A Aᵀ / n + I`.
pub fn spd_matrix(n: usize, seed: u64) -> Matrix {
    let mut rng = seeded_rng(seed);
    let a = Matrix::from_fn(n, n, |_, _| standard_normal(&mut rng, 1)[0]);
    &a * a.transpose() / n as f64 + Matrix::identity(n, n)
}

pub fn eigen(n: usize, seed: u64) -> SymEigen {
    SymEigen::new(&spd_matrix(n, seed)).expect("spd input")
}

pub fn random_vector(n: usize, seed: u64) -> Vector {
    standard_normal(&mut seeded_rng(seed), n)
}

/// Small weights so the closed-form denominator stays away from zero.
pub fn last_layer_weights(k: usize, p: usize, seed: u64) -> Matrix {
    let mut rng = seeded_rng(seed);
    Matrix::from_fn(k, p, |_, _| 1e-3 * standard_normal(&mut rng, 1)[0])
}

pub fn mlp(widths: &[usize], head: Head, seed: u64) -> MlpNet {
    MlpNet::he_init(widths, head, &mut seeded_rng(seed)).expect("valid widths")
}
