//! Common spatial patterns.
//!
//! Filters solve the symmetric-definite generalized eigenproblem
//! `Σ₋ w = λ (Σ₋ + Σ₊) w` by Cholesky reduction. Columns are ordered by
//! descending `λ`; the first `n` maximize class −1 variance relative to class +1,
//! the last `n` do the opposite.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::signal::Trial;
use crate::spd_core::{self, SpdMatrix, SymEig};
use crate::Label;

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFilter<T: Real> {
    /// `C × 2n`, one filter per column.
    pub weights: DMatrix<T>,
    /// Generalized eigenvalue of each retained column.
    pub eigenvalues: DVector<T>,
    pub n_pairs: usize,
}

impl<T: Real> SpatialFilter<T> {
    pub fn n_channels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T: Real> {
    pub values: DVector<T>,
    pub label: Option<Label>,
}

/// Sorted distinct labels.
pub fn class_alphabet(labels: &[Label]) -> Vec<Label> {
    let mut a = labels.to_vec();
    a.sort_unstable();
    a.dedup();
    a
}

/// Arithmetic mean of the covariances labelled `class`.
pub fn class_mean_covariance<T: Real>(
    covs: &[SpdMatrix<T>],
    labels: &[Label],
    class: Label,
) -> Result<SpdMatrix<T>> {
    if covs.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} covariances but {} labels",
            covs.len(),
            labels.len()
        )));
    }
    let mut members = covs.iter().zip(labels).filter(|(_, &l)| l == class).map(|(c, _)| c);
    let first = members
        .next()
        .ok_or_else(|| Error::invalid(format!("no trials of class {class}")))?;
    let mut sum = first.as_matrix().clone();
    let mut count = 1usize;
    for c in members {
        if c.dim() != first.dim() {
            return Err(Error::invalid("covariances of differing dimension"));
        }
        sum += c.as_matrix();
        count += 1;
    }
    Ok(SpdMatrix::from_trusted(sum / T::of(count as f64)))
}

/// Full solution of `A v = λ B v` for symmetric `A` and SPD `B`.
///
/// With `B = L Lᵀ`, the standard problem on `L⁻¹ A L⁻ᵀ` is solved and its
/// eigenvectors mapped back through `L⁻ᵀ`, so the returned vectors are
/// `B`-orthonormal. Eigenvalues descend.
pub fn generalized_eigen<T: Real>(a: &DMatrix<T>, b: &SpdMatrix<T>) -> Result<SymEig<T>> {
    if a.shape() != b.as_matrix().shape() {
        return Err(Error::invalid("generalized_eigen: dimension mismatch"));
    }
    let chol = b.as_matrix().clone().cholesky().ok_or_else(|| {
        Error::domain("class covariance sum is not positive definite; apply shrinkage to the covariances")
    })?;
    let l = chol.l();
    let left = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::numerical("triangular solve failed"))?;
    let reduced = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::numerical("triangular solve failed"))?;
    let eig = spd_core::sym_eig(&spd_core::symmetrize(&reduced))?;
    let vectors = l
        .transpose()
        .solve_upper_triangular(&eig.vectors)
        .ok_or_else(|| Error::numerical("triangular solve failed"))?;
    Ok(SymEig {
        values: eig.values,
        vectors,
    })
}

/// CSP filters from the two class-mean covariances.
pub fn csp_filters<T: Real>(
    sigma_neg: &SpdMatrix<T>,
    sigma_pos: &SpdMatrix<T>,
    n_pairs: usize,
) -> Result<SpatialFilter<T>> {
    let c = sigma_neg.dim();
    if sigma_pos.dim() != c {
        return Err(Error::invalid("class covariances differ in dimension"));
    }
    if n_pairs == 0 || 2 * n_pairs > c {
        return Err(Error::invalid(format!(
            "n_pairs = {n_pairs} needs 1 <= 2n <= C = {c}"
        )));
    }
    let sum = SpdMatrix::new(sigma_neg.as_matrix() + sigma_pos.as_matrix()).map_err(|e| match e {
        Error::DomainError(m) => Error::domain(format!("{m}; apply shrinkage to the covariances")),
        other => other,
    })?;
    let eig = generalized_eigen(sigma_neg.as_matrix(), &sum)?;

    let keep: Vec<usize> = (0..n_pairs).chain(c - n_pairs..c).collect();
    let mut weights = DMatrix::zeros(c, 2 * n_pairs);
    let mut eigenvalues = DVector::zeros(2 * n_pairs);
    for (dst, &src) in keep.iter().enumerate() {
        let mut col = eig.vectors.column(src).into_owned();
        let lead = col.iamax();
        if col[lead] < T::zero() {
            col.neg_mut();
        }
        weights.set_column(dst, &col);
        eigenvalues[dst] = eig.values[src];
    }
    Ok(SpatialFilter {
        weights,
        eigenvalues,
        n_pairs,
    })
}

/// Class means of `±1`-labelled covariances followed by [`csp_filters`].
pub fn csp_from_covariances<T: Real>(
    covs: &[SpdMatrix<T>],
    binary_labels: &[Label],
    n_pairs: usize,
) -> Result<SpatialFilter<T>> {
    let neg = class_mean_covariance(covs, binary_labels, -1)?;
    let pos = class_mean_covariance(covs, binary_labels, 1)?;
    csp_filters(&neg, &pos, n_pairs)
}

/// `log(diag(Wᵀ S W))` for a precomputed scatter matrix `S = X Xᵀ`.
pub fn log_variance_from_scatter<T: Real>(
    filter: &SpatialFilter<T>,
    scatter: &DMatrix<T>,
) -> Result<DVector<T>> {
    if scatter.nrows() != filter.n_channels() {
        return Err(Error::invalid(format!(
            "filter has {} channels, data has {}",
            filter.n_channels(),
            scatter.nrows()
        )));
    }
    let sw = scatter * &filter.weights;
    let mut out = DVector::zeros(filter.n_features());
    for j in 0..filter.n_features() {
        let v = filter.weights.column(j).dot(&sw.column(j));
        if !(v > T::zero()) || !v.is_finite() {
            return Err(Error::degenerate(format!(
                "projected variance of filter {j} is not positive ({:.3e})",
                v.as_f64()
            )));
        }
        out[j] = v.ln();
    }
    Ok(out)
}

/// Log-variance features of `trial` under `filter`.
pub fn log_variance_features<T: Real>(
    filter: &SpatialFilter<T>,
    trial: &Trial<T>,
) -> Result<FeatureVector<T>> {
    if trial.n_channels() != filter.n_channels() {
        return Err(Error::invalid(format!(
            "filter has {} channels, trial has {}",
            filter.n_channels(),
            trial.n_channels()
        )));
    }
    let projected = filter.weights.transpose() * &trial.data;
    let mut values = DVector::zeros(filter.n_features());
    for j in 0..filter.n_features() {
        let v = projected.row(j).norm_squared();
        if !(v > T::zero()) {
            return Err(Error::degenerate(format!(
                "projected variance of filter {j} is not positive"
            )));
        }
        values[j] = v.ln();
    }
    Ok(FeatureVector {
        values,
        label: None,
    })
}

/// One binary problem of a one-vs-rest decomposition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryTask {
    /// The class mapped to `+1`.
    pub class_id: Label,
    /// `+1` for `class_id`, `-1` otherwise, aligned with the input labels.
    pub labels: Vec<Label>,
}

/// One task per class, ascending by label.
pub fn ovr_tasks(labels: &[Label]) -> Result<Vec<BinaryTask>> {
    let alphabet = class_alphabet(labels);
    if alphabet.len() < 2 {
        return Err(Error::invalid("one-vs-rest needs at least two classes"));
    }
    Ok(alphabet
        .into_iter()
        .map(|class_id| BinaryTask {
            class_id,
            labels: binarize(labels, class_id),
        })
        .collect())
}

pub fn binarize(labels: &[Label], positive: Label) -> Vec<Label> {
    labels.iter().map(|&l| if l == positive { 1 } else { -1 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::{random_matrix, random_spd, rng};
    use approx::assert_relative_eq;

    fn spd(m: DMatrix<f64>) -> SpdMatrix<f64> {
        SpdMatrix::new(m).unwrap()
    }

    fn diag(v: &[f64]) -> SpdMatrix<f64> {
        SpdMatrix::from_diagonal(v).unwrap()
    }

    #[test]
    fn class_means() {
        let mut r = rng(20);
        let a = spd(random_spd(&mut r, 3));
        let b = spd(random_spd(&mut r, 3));
        let c = spd(random_spd(&mut r, 3));
        assert_eq!(class_mean_covariance(&[a.clone()], &[1], 1).unwrap(), a);
        let m = class_mean_covariance(&[a.clone(), a.clone()], &[2, 2], 2).unwrap();
        assert!((m.as_matrix() - a.as_matrix()).amax() < 1e-15);

        let covs = [a.clone(), b.clone(), c.clone()];
        let m = class_mean_covariance(&covs, &[1, 2, 1], 1).unwrap();
        let oracle = (a.as_matrix() + c.as_matrix()) / 2.0;
        assert!((m.as_matrix() - oracle).amax() < 1e-14);
        assert!(matches!(
            class_mean_covariance(&covs, &[1, 2, 1], 3),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn diagonal_closed_form() {
        let f = csp_filters(&diag(&[2.0 / 3.0, 1.0 / 3.0]), &diag(&[1.0 / 3.0, 2.0 / 3.0]), 1).unwrap();
        assert_relative_eq!(f.eigenvalues[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(f.eigenvalues[1], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(f.weights[(1, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(f.weights[(0, 1)], 0.0, epsilon = 1e-12);
        assert!(f.weights[(0, 0)] > 0.0 && f.weights[(1, 1)] > 0.0);
    }

    #[test]
    fn equal_classes_give_half() {
        let mut r = rng(21);
        let a = spd(random_spd(&mut r, 4));
        let f = csp_filters(&a, &a, 2).unwrap();
        for &l in f.eigenvalues.iter() {
            assert_relative_eq!(l, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn generalized_residual_and_pairing() {
        let mut r = rng(22);
        let neg = spd(random_spd(&mut r, 8));
        let pos = spd(random_spd(&mut r, 8));
        let sum = neg.as_matrix() + pos.as_matrix();
        let f = csp_filters(&neg, &pos, 3).unwrap();
        for j in 0..6 {
            let w = f.weights.column(j);
            let res = neg.as_matrix() * w - &sum * w * f.eigenvalues[j];
            assert!(res.norm() < 1e-8, "residual {}", res.norm());
            assert!(f.eigenvalues[j] > 0.0 && f.eigenvalues[j] < 1.0);
            // λ₋ + λ₊ = 1 along the same direction
            let lp = w.dot(&(pos.as_matrix() * w)) / w.dot(&(&sum * w));
            assert!((f.eigenvalues[j] + lp - 1.0).abs() < 1e-10);
        }
        for w in f.eigenvalues.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn csp_is_congruence_equivariant() {
        let mut r = rng(23);
        let neg = spd(random_spd(&mut r, 5));
        let pos = spd(random_spd(&mut r, 5));
        let mix = random_matrix(&mut r, 5, 5);
        let f0 = csp_filters(&neg, &pos, 2).unwrap();
        let f1 = csp_filters(&neg.congruence(&mix).unwrap(), &pos.congruence(&mix).unwrap(), 2).unwrap();
        assert!((&f0.eigenvalues - &f1.eigenvalues).amax() < 1e-8);

        let x = random_matrix(&mut r, 5, 200);
        let t0 = Trial::new(x.clone(), 100.0).unwrap();
        let t1 = Trial::new(&mix * x, 100.0).unwrap();
        let a = log_variance_features(&f0, &t0).unwrap().values;
        let b = log_variance_features(&f1, &t1).unwrap().values;
        assert!((a - b).amax() < 1e-8);
    }

    #[test]
    fn csp_argument_errors() {
        let a = diag(&[1.0, 2.0, 3.0]);
        assert!(matches!(csp_filters(&a, &a, 2), Err(Error::InvalidInput(_))));
        assert!(matches!(csp_filters(&a, &a, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn features_identity_filter() {
        let mut r = rng(24);
        let q = random_matrix(&mut r, 60, 4).qr().q().transpose();
        let trial = Trial::new(q, 100.0).unwrap();
        let filter = SpatialFilter {
            weights: DMatrix::identity(4, 4),
            eigenvalues: DVector::from_element(4, 0.5),
            n_pairs: 2,
        };
        let f = log_variance_features(&filter, &trial).unwrap();
        assert!(f.values.amax() < 1e-12);

        let scaled = Trial::new(&trial.data * 3.0, 100.0).unwrap();
        let g = log_variance_features(&filter, &scaled).unwrap();
        let shift = 2.0 * 3.0f64.ln();
        for j in 0..4 {
            assert_relative_eq!(g.values[j] - f.values[j], shift, epsilon = 1e-12);
        }
    }

    #[test]
    fn features_match_explicit_diag() {
        let mut r = rng(25);
        let x = random_matrix(&mut r, 6, 80);
        let filter = SpatialFilter {
            weights: random_matrix(&mut r, 6, 4),
            eigenvalues: DVector::zeros(4),
            n_pairs: 2,
        };
        let f = log_variance_features(&filter, &Trial::new(x.clone(), 100.0).unwrap()).unwrap();
        let oracle = (filter.weights.transpose() * &x * x.transpose() * &filter.weights).map_diagonal(|v| v.ln());
        assert!((&f.values - &oracle).amax() < 1e-12);
        let g = log_variance_from_scatter(&filter, &(&x * x.transpose())).unwrap();
        assert!((g - oracle).amax() < 1e-12);
    }

    #[test]
    fn zero_projection_is_degenerate() {
        let mut data = DMatrix::zeros(2, 10);
        data.row_mut(0).fill(1.0);
        let filter = SpatialFilter {
            weights: DMatrix::identity(2, 2),
            eigenvalues: DVector::zeros(2),
            n_pairs: 1,
        };
        let t = Trial::new(data, 10.0).unwrap();
        assert!(matches!(log_variance_features(&filter, &t), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn ovr_decomposition() {
        let tasks = ovr_tasks(&[2, 1, 2, 1]).unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[0].labels, vec![-1, 1, -1, 1]);
        assert_eq!(tasks[1].labels, vec![1, -1, 1, -1]);

        let labels = [1, 2, 3, 4, 4, 3, 2, 1, 1];
        let tasks = ovr_tasks(&labels).unwrap();
        assert_eq!(tasks.iter().map(|t| t.class_id).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        for t in &tasks {
            let pos = t.labels.iter().filter(|&&l| l == 1).count();
            let neg = t.labels.iter().filter(|&&l| l == -1).count();
            assert_eq!(pos + neg, labels.len());
        }
        assert!(matches!(ovr_tasks(&[3, 3]), Err(Error::InvalidInput(_))));
    }
}
