//! Linear algebra on the manifold of symmetric positive definite matrices.
//!
//! All matrix functions go through a symmetric eigendecomposition. The Log/Exp
//! maps use the affine-invariant form
//!
//! ```text
//! Log_A(X) = A^{1/2} log(A^{-1/2} X A^{-1/2}) A^{1/2}
//! Exp_A(S) = A^{1/2} exp(A^{-1/2} S A^{-1/2}) A^{1/2}
//! ```
//!
//! so that `Log_A(A) = 0` and `Exp_A(Log_A(X)) = X`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

const EIG_MAX_ITER: usize = 10_000;

/// Symmetric positive definite matrix.
///
/// Construction through [`SpdMatrix::new`] checks symmetry (relative `1e-10`) and
/// numerical positive definiteness (smallest eigenvalue above `dim * eps * λ_max`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix<T: Real> {
    m: DMatrix<T>,
}

impl<T: Real> SpdMatrix<T> {
    pub fn new(m: DMatrix<T>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::invalid(format!(
                "SPD matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_symmetric(&m, "SpdMatrix::new")?;
        let m = symmetrize(&m);
        let eig = sym_eig(&m)?;
        let max = eig.values[0];
        let min = eig.values[eig.values.len() - 1];
        let floor = T::default_epsilon() * T::of(m.nrows() as f64) * max.abs();
        if !(min > T::zero()) || min <= floor {
            return Err(Error::domain(format!(
                "matrix is not positive definite (smallest eigenvalue {:.3e}, largest {:.3e})",
                min.as_f64(),
                max.as_f64()
            )));
        }
        Ok(SpdMatrix { m })
    }

    /// Wraps a matrix known to be SPD by construction; the input is symmetrized.
    pub(crate) fn from_trusted(m: DMatrix<T>) -> Self {
        SpdMatrix { m: symmetrize(&m) }
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix {
            m: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[T]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.m
    }

    pub fn into_inner(self) -> DMatrix<T> {
        self.m
    }

    pub fn trace(&self) -> T {
        self.m.trace()
    }

    /// `(A^{1/2}, A^{-1/2})` from a single eigendecomposition.
    pub fn sqrt_pair(&self) -> Result<(DMatrix<T>, DMatrix<T>)> {
        let eig = sym_eig(&self.m)?;
        check_spectrum(&eig.values, MatrixFn::InvSqrt)?;
        let sqrt = eig.reconstruct_with(|l| l.sqrt());
        let inv_sqrt = eig.reconstruct_with(|l| T::one() / l.sqrt());
        Ok((sqrt, inv_sqrt))
    }

    pub fn inverse(&self) -> Result<DMatrix<T>> {
        self.m
            .clone()
            .cholesky()
            .map(|c| symmetrize(&c.inverse()))
            .ok_or_else(|| Error::domain("Cholesky factorization failed while inverting"))
    }

    /// Congruence `C A Cᵀ`. `c` must be square and invertible for the result to be SPD.
    pub fn congruence(&self, c: &DMatrix<T>) -> Result<Self> {
        if c.ncols() != self.dim() {
            return Err(Error::invalid("congruence: dimension mismatch"));
        }
        Self::new(symmetrize(&(c * &self.m * c.transpose())))
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SymEig<T: Real> {
    pub values: DVector<T>,
    /// Orthonormal eigenvectors stored as columns, in the order of `values`.
    pub vectors: DMatrix<T>,
}

impl<T: Real> SymEig<T> {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(T) -> T) -> DMatrix<T> {
        let mut scaled = self.vectors.clone();
        for (j, &l) in self.values.iter().enumerate() {
            let fl = f(l);
            scaled.column_mut(j).scale_mut(fl);
        }
        symmetrize(&(scaled * self.vectors.transpose()))
    }
}

pub fn sym_eig<T: Real>(s: &DMatrix<T>) -> Result<SymEig<T>> {
    if !s.is_square() {
        return Err(Error::invalid("sym_eig: matrix must be square"));
    }
    check_symmetric(s, "sym_eig")?;
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("sym_eig: non-finite entry"));
    }
    let n = s.nrows();
    let eig = SymmetricEigen::try_new(symmetrize(s), T::default_epsilon(), EIG_MAX_ITER)
        .ok_or_else(|| Error::numerical(format!("symmetric eigensolver did not converge ({n}x{n})")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEig { values, vectors })
}

/// Scalar functions that can be lifted to symmetric matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFn {
    Log,
    Exp,
    Sqrt,
    InvSqrt,
}

fn check_spectrum<T: Real>(values: &DVector<T>, f: MatrixFn) -> Result<()> {
    let max = values[0];
    let min = values[values.len() - 1];
    match f {
        MatrixFn::Exp => Ok(()),
        MatrixFn::Sqrt => {
            if min > T::zero() {
                Ok(())
            } else {
                Err(Error::domain(format!(
                    "sqrt requires a positive definite matrix (smallest eigenvalue {:.3e})",
                    min.as_f64()
                )))
            }
        }
        MatrixFn::Log | MatrixFn::InvSqrt => {
            if min > T::zero() && min >= T::tol(1e-12) * max {
                Ok(())
            } else {
                Err(Error::domain(format!(
                    "{f:?} requires eigenvalues above 1e-12 * λ_max (got λ_min = {:.3e}, λ_max = {:.3e}); shrink the covariance upstream",
                    min.as_f64(),
                    max.as_f64()
                )))
            }
        }
    }
}

pub fn matrix_fn<T: Real>(s: &DMatrix<T>, f: MatrixFn) -> Result<DMatrix<T>> {
    let eig = sym_eig(s)?;
    check_spectrum(&eig.values, f)?;
    Ok(match f {
        MatrixFn::Log => eig.reconstruct_with(|l| l.ln()),
        MatrixFn::Exp => eig.reconstruct_with(|l| l.exp()),
        MatrixFn::Sqrt => eig.reconstruct_with(|l| l.sqrt()),
        MatrixFn::InvSqrt => eig.reconstruct_with(|l| T::one() / l.sqrt()),
    })
}

/// A symmetric matrix in the tangent space at `base`.
#[derive(Debug, Clone)]
pub struct TangentVector<T: Real> {
    pub base: SpdMatrix<T>,
    pub sym: DMatrix<T>,
}

impl<T: Real> TangentVector<T> {
    /// Upper-triangular flattening of `sym`.
    pub fn vec(&self) -> DVector<T> {
        vec_upper_unchecked(&self.sym)
    }

    pub fn exp(&self) -> Result<SpdMatrix<T>> {
        exp_map(&self.base, &self.sym)
    }
}

fn check_same_dim<T: Real>(a: &SpdMatrix<T>, b: &DMatrix<T>, what: &str) -> Result<()> {
    if a.dim() != b.nrows() || !b.is_square() {
        return Err(Error::invalid(format!(
            "{what}: dimension mismatch ({} vs {}x{})",
            a.dim(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}

pub fn log_map<T: Real>(base: &SpdMatrix<T>, x: &SpdMatrix<T>) -> Result<TangentVector<T>> {
    check_same_dim(base, x.as_matrix(), "log_map")?;
    let (sqrt, inv_sqrt) = base.sqrt_pair()?;
    let sym = log_map_with(&sqrt, &inv_sqrt, x)?;
    Ok(TangentVector {
        base: base.clone(),
        sym,
    })
}

/// Log map with the base square roots precomputed.
pub(crate) fn log_map_with<T: Real>(
    sqrt: &DMatrix<T>,
    inv_sqrt: &DMatrix<T>,
    x: &SpdMatrix<T>,
) -> Result<DMatrix<T>> {
    let whitened = symmetrize(&(inv_sqrt * x.as_matrix() * inv_sqrt));
    let log = matrix_fn(&whitened, MatrixFn::Log)?;
    Ok(symmetrize(&(sqrt * log * sqrt)))
}

/// Exp map at `base` of the symmetric matrix `s`.
pub fn exp_map<T: Real>(base: &SpdMatrix<T>, s: &DMatrix<T>) -> Result<SpdMatrix<T>> {
    check_same_dim(base, s, "exp_map")?;
    check_symmetric(s, "exp_map")?;
    let (sqrt, inv_sqrt) = base.sqrt_pair()?;
    exp_map_with(&sqrt, &inv_sqrt, s)
}

pub(crate) fn exp_map_with<T: Real>(
    sqrt: &DMatrix<T>,
    inv_sqrt: &DMatrix<T>,
    s: &DMatrix<T>,
) -> Result<SpdMatrix<T>> {
    let whitened = symmetrize(&(inv_sqrt * s * inv_sqrt));
    let e = matrix_fn(&whitened, MatrixFn::Exp)?;
    Ok(SpdMatrix::from_trusted(sqrt * e * sqrt))
}

/// AIRM inner product `tr(A⁻¹ S1 A⁻¹ S2)` of two tangent matrices at `base`.
pub fn airm_inner<T: Real>(base: &SpdMatrix<T>, s1: &DMatrix<T>, s2: &DMatrix<T>) -> Result<T> {
    check_same_dim(base, s1, "airm_inner")?;
    check_same_dim(base, s2, "airm_inner")?;
    let chol = base
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::domain("airm_inner: base is not positive definite"))?;
    let b1 = chol.solve(s1);
    let b2 = chol.solve(s2);
    // tr(B1 B2) = Σ_ij B1[i,j] B2[j,i]
    Ok(b1.component_mul(&b2.transpose()).sum())
}

pub fn airm_distance_squared<T: Real>(x1: &SpdMatrix<T>, x2: &SpdMatrix<T>) -> Result<T> {
    check_same_dim(x1, x2.as_matrix(), "airm_distance")?;
    let (_, inv_sqrt) = x1.sqrt_pair()?;
    let whitened = symmetrize(&(&inv_sqrt * x2.as_matrix() * &inv_sqrt));
    let eig = sym_eig(&whitened)?;
    check_spectrum(&eig.values, MatrixFn::Log)?;
    Ok(eig.values.iter().map(|&l| l.ln() * l.ln()).fold(T::zero(), |a, b| a + b))
}

/// Affine-invariant geodesic distance `sqrt(Σ log² λ_k(X1⁻¹ X2))`.
pub fn airm_distance<T: Real>(x1: &SpdMatrix<T>, x2: &SpdMatrix<T>) -> Result<T> {
    airm_distance_squared(x1, x2).map(|d| d.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanOptions {
    /// Stop when the Frobenius norm of the mean tangent vector drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MeanOptions {
    fn default() -> Self {
        MeanOptions {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KarcherMean<T: Real> {
    pub mean: SpdMatrix<T>,
    pub iterations: usize,
    /// `‖(1/n) Σ Log_μ(X_i)‖_F` at the returned mean.
    pub gradient_norm: T,
}

pub fn riemannian_mean<T: Real>(set: &[SpdMatrix<T>], opts: &MeanOptions) -> Result<SpdMatrix<T>> {
    riemannian_mean_detailed(set, opts).map(|k| k.mean)
}

/// Karcher flow with unit step, started from the arithmetic mean.
pub fn riemannian_mean_detailed<T: Real>(
    set: &[SpdMatrix<T>],
    opts: &MeanOptions,
) -> Result<KarcherMean<T>> {
    let first = set
        .first()
        .ok_or_else(|| Error::invalid("riemannian_mean: empty set"))?;
    let dim = first.dim();
    if set.iter().any(|x| x.dim() != dim) {
        return Err(Error::invalid("riemannian_mean: matrices of differing dimension"));
    }
    let n = T::of(set.len() as f64);
    let tol = T::tol(opts.tol);

    let mut sum = DMatrix::zeros(dim, dim);
    for x in set {
        sum += x.as_matrix();
    }
    let mut mean = SpdMatrix::from_trusted(sum / n);

    let mut iterations = 0;
    loop {
        let (sqrt, inv_sqrt) = mean.sqrt_pair()?;
        let mut avg_log = DMatrix::zeros(dim, dim);
        for x in set {
            let whitened = symmetrize(&(&inv_sqrt * x.as_matrix() * &inv_sqrt));
            avg_log += matrix_fn(&whitened, MatrixFn::Log)?;
        }
        avg_log /= n;
        let gradient_norm = (&sqrt * &avg_log * &sqrt).norm();
        if gradient_norm <= tol {
            return Ok(KarcherMean {
                mean,
                iterations,
                gradient_norm,
            });
        }
        if iterations >= opts.max_iter {
            if gradient_norm <= tol * T::of(100.0) {
                log::warn!(
                    "riemannian_mean: max_iter {} reached with gradient {:.3e} (tol {:.1e})",
                    opts.max_iter,
                    gradient_norm.as_f64(),
                    opts.tol
                );
                return Ok(KarcherMean {
                    mean,
                    iterations,
                    gradient_norm,
                });
            }
            return Err(Error::numerical(format!(
                "riemannian_mean did not converge: {} iterations, gradient norm {:.3e} > 100 * tol ({:.1e}), {} matrices of dim {}",
                iterations,
                gradient_norm.as_f64(),
                opts.tol,
                set.len(),
                dim
            )));
        }
        let step = matrix_fn(&avg_log, MatrixFn::Exp)?;
        mean = SpdMatrix::from_trusted(&sqrt * step * &sqrt);
        iterations += 1;
    }
}

/// Length of the upper-triangular flattening of a `dim × dim` matrix.
pub fn vec_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Row-major upper-triangular flattening `(s00, s01, .., s0n, s11, ..)`, unweighted.
pub fn vec_upper<T: Real>(s: &DMatrix<T>) -> Result<DVector<T>> {
    if !s.is_square() {
        return Err(Error::invalid("vec_upper: matrix must be square"));
    }
    check_symmetric(s, "vec_upper")?;
    Ok(vec_upper_unchecked(s))
}

pub(crate) fn vec_upper_unchecked<T: Real>(s: &DMatrix<T>) -> DVector<T> {
    let n = s.nrows();
    let mut out = Vec::with_capacity(vec_len(n));
    for i in 0..n {
        for j in i..n {
            out.push(s[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

/// Inverse of [`vec_upper`].
pub fn mat_from_vec<T: Real>(v: &DVector<T>) -> Result<DMatrix<T>> {
    let len = v.len();
    // dim = (sqrt(8 len + 1) - 1) / 2
    let dim = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    if vec_len(dim) != len || len == 0 {
        return Err(Error::invalid(format!(
            "mat_from_vec: length {len} is not a triangular number"
        )));
    }
    let mut m = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for i in 0..dim {
        for j in i..dim {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    Ok(m)
}

pub(crate) fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::of(0.5)
}

pub(crate) fn check_symmetric<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    let scale = m.amax();
    let mut worst = T::zero();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let d = (m[(i, j)] - m[(j, i)]).abs();
            if d > worst {
                worst = d;
            }
        }
    }
    if worst > T::tol(1e-10) * scale {
        return Err(Error::invalid(format!(
            "{what}: matrix is not symmetric (max asymmetry {:.3e}, scale {:.3e})",
            worst.as_f64(),
            scale.as_f64()
        )));
    }
    Ok(())
}
