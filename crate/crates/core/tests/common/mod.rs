//! Independent reference implementations for the integration tests. These use
//! only nalgebra's symmetric eigensolver so that they do not share code paths
//! with the library under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

pub fn orthogonal(r: &mut impl Rng, dim: usize) -> DMatrix<f64> {
    gaussian(r, dim, dim).qr().q()
}

/// `Q diag(exp(u)) Qᵀ`, `u ~ U(-spread, spread)`.
pub fn spd(r: &mut impl Rng, dim: usize, spread: f64) -> DMatrix<f64> {
    let q = orthogonal(r, dim);
    let d = DVector::from_fn(dim, |_, _| r.random_range(-spread..spread).exp());
    let m = &q * DMatrix::from_diagonal(&d) * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn sym_fn(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let e = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let d = e.eigenvalues.map(f);
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

pub fn sqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, f64::sqrt)
}

pub fn inv_sqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, |x| 1.0 / x.sqrt())
}

pub fn logm(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, f64::ln)
}

/// `log_P(X) = P^½ log(P^-½ X P^-½) P^½`.
pub fn log_at(p: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let (s, is) = (sqrtm(p), inv_sqrtm(p));
    &s * logm(&(&is * x * &is)) * &s
}

/// Geodesic midpoint `P^½ (P^-½ Q P^-½)^½ P^½`.
pub fn midpoint(p: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let (s, is) = (sqrtm(p), inv_sqrtm(p));
    &s * sqrtm(&(&is * q * &is)) * &s
}

/// Affine-invariant distance via the eigenvalues of `P^-½ Q P^-½`.
pub fn distance(p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let is = inv_sqrtm(p);
    let w = &is * q * &is;
    SymmetricEigen::new((&w + w.transpose()) * 0.5)
        .eigenvalues
        .iter()
        .map(|l| l.ln().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Riemannian norm at `m` of the mean tangent vector of `set`.
pub fn karcher_gradient(m: &DMatrix<f64>, set: &[DMatrix<f64>]) -> f64 {
    let is = inv_sqrtm(m);
    let mut acc = DMatrix::zeros(m.nrows(), m.ncols());
    for x in set {
        acc += logm(&(&is * x * &is));
    }
    (acc / set.len() as f64).norm()
}

/// Upper triangle, row by row.
pub fn vec_upper(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            v.push(m[(i, j)]);
        }
    }
    DVector::from_vec(v)
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
