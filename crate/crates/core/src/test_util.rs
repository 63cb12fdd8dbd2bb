//! Random fixtures shared by the unit tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

pub fn random_symmetric(r: &mut impl Rng, dim: usize) -> DMatrix<f64> {
    let g = random_matrix(r, dim, dim);
    (&g + g.transpose()) * 0.5
}

pub fn random_orthogonal(r: &mut impl Rng, dim: usize) -> DMatrix<f64> {
    random_matrix(r, dim, dim).qr().q()
}

/// `Q diag(exp(u)) Qᵀ` with `u ~ U(-1.5, 1.5)`.
pub fn random_spd(r: &mut impl Rng, dim: usize) -> DMatrix<f64> {
    let q = random_orthogonal(r, dim);
    let d = DVector::from_fn(dim, |_, _| r.random_range(-1.5f64..1.5).exp());
    let m = &q * DMatrix::from_diagonal(&d) * q.transpose();
    (&m + m.transpose()) * 0.5
}
