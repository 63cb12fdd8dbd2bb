//! Per-class alignment of source covariances to a target subject.
//!
//! For one class, both covariance sets are taken to the tangent space at their
//! own Riemannian mean and flattened. The leading principal directions `P_S`,
//! `P_T` of each set and the Cholesky factors `L_S`, `L_T` of the second moment
//! in those planes define the map
//!
//! ```text
//! x ↦ P_Tᵀ L_T L_S⁻¹ P_S x
//! ```
//!
//! whose output is unflattened and sent back to the manifold with `Exp_{M_T}`.
//! Components of `x` outside the span of `P_S` are dropped.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::csp::class_alphabet;
use crate::error::{Error, Result};
use crate::matrix_json::{from_rows, to_rows};
use crate::scalar::Real;
use crate::spd_core::{self, MeanOptions, SpdMatrix};
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignOptions {
    pub n_components: usize,
    /// Divide the PC-space second moment by the trial count. With `false` the
    /// unnormalized `P Σ̃ Σ̃ᵀ Pᵀ` is used and the map picks up a `sqrt(M/N)` factor
    /// whenever source and target trial counts differ.
    pub normalize_by_count: bool,
    pub mean: MeanOptions,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            n_components: 2,
            normalize_by_count: true,
            mean: MeanOptions::default(),
        }
    }
}

impl AlignOptions {
    /// Unnormalized PC-space second moments.
    pub fn strict() -> Self {
        AlignOptions {
            normalize_by_count: false,
            ..Self::default()
        }
    }
}

/// Everything needed to replay the alignment of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMap<T: Real> {
    pub class_id: Label,
    pub source_mean: SpdMatrix<T>,
    pub target_mean: SpdMatrix<T>,
    /// `k × d`, orthonormal rows.
    pub source_pcs: DMatrix<T>,
    pub target_pcs: DMatrix<T>,
    /// `k × k` lower triangular, positive diagonal.
    pub source_chol: DMatrix<T>,
    pub target_chol: DMatrix<T>,
}

impl<T: Real> AlignmentMap<T> {
    /// Applies the linear part to flattened source tangent vectors (one per row).
    pub fn transform_rows(&self, rows: &DMatrix<T>) -> Result<DMatrix<T>> {
        // Z = X P_Sᵀ;  Z' = Z L_S⁻ᵀ L_Tᵀ;  X_al = Z' P_T
        let z = rows * self.source_pcs.transpose();
        let whitened = self
            .source_chol
            .solve_lower_triangular(&z.transpose())
            .ok_or_else(|| Error::numerical("singular source Cholesky factor"))?;
        let recolored = (&self.target_chol * whitened).transpose();
        Ok(recolored * &self.target_pcs)
    }

    /// Maps one source covariance to the target's manifold neighbourhood.
    pub fn apply(&self, cov: &SpdMatrix<T>) -> Result<SpdMatrix<T>> {
        let t = spd_core::log_map(&self.source_mean, cov)?;
        let row = DMatrix::from_row_slice(1, t.vec().len(), t.vec().as_slice());
        let al = self.transform_rows(&row)?;
        let sym = spd_core::mat_from_vec(&al.row(0).transpose())?;
        spd_core::exp_map(&self.target_mean, &sym)
    }

    pub fn to_doc(&self) -> AlignmentMapDoc {
        AlignmentMapDoc {
            class_id: self.class_id,
            source_mean: to_rows(self.source_mean.as_matrix()),
            target_mean: to_rows(self.target_mean.as_matrix()),
            source_pcs: to_rows(&self.source_pcs),
            target_pcs: to_rows(&self.target_pcs),
            source_chol: to_rows(&self.source_chol),
            target_chol: to_rows(&self.target_chol),
        }
    }

    pub fn from_doc(doc: &AlignmentMapDoc) -> Result<Self> {
        Ok(AlignmentMap {
            class_id: doc.class_id,
            source_mean: SpdMatrix::new(from_rows(&doc.source_mean)?)?,
            target_mean: SpdMatrix::new(from_rows(&doc.target_mean)?)?,
            source_pcs: from_rows(&doc.source_pcs)?,
            target_pcs: from_rows(&doc.target_pcs)?,
            source_chol: from_rows(&doc.source_chol)?,
            target_chol: from_rows(&doc.target_chol)?,
        })
    }
}

/// JSON form of an [`AlignmentMap`]; matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMapDoc {
    pub class_id: Label,
    pub source_mean: Vec<Vec<f64>>,
    pub target_mean: Vec<Vec<f64>>,
    pub source_pcs: Vec<Vec<f64>>,
    pub target_pcs: Vec<Vec<f64>>,
    pub source_chol: Vec<Vec<f64>>,
    pub target_chol: Vec<Vec<f64>>,
}

/// Riemannian mean of `covs` and their flattened tangent vectors at it (`N × d`).
pub fn tangent_vectors_at_mean<T: Real>(
    covs: &[SpdMatrix<T>],
    opts: &MeanOptions,
) -> Result<(SpdMatrix<T>, DMatrix<T>)> {
    if covs.len() < 2 {
        return Err(Error::invalid(format!(
            "tangent vectors need at least 2 covariances, got {}",
            covs.len()
        )));
    }
    let mean = spd_core::riemannian_mean(covs, opts)?;
    let (sqrt, inv_sqrt) = mean.sqrt_pair()?;
    let d = spd_core::vec_len(mean.dim());
    let mut rows = DMatrix::zeros(covs.len(), d);
    for (i, c) in covs.iter().enumerate() {
        let s = spd_core::log_map_with(&sqrt, &inv_sqrt, c)?;
        let v = spd_core::vec_upper_unchecked(&s);
        rows.row_mut(i).copy_from(&v.transpose());
    }
    Ok((mean, rows))
}

/// Leading `k` right singular vectors of the uncentered data matrix, as rows.
pub fn principal_components<T: Real>(vectors: &DMatrix<T>, k: usize) -> Result<DMatrix<T>> {
    let (n, d) = vectors.shape();
    if k == 0 || n < k || d < k {
        return Err(Error::degenerate(format!(
            "{k} principal components from {n} vectors of length {d}"
        )));
    }
    let svd = SVD::try_new(vectors.clone(), false, true, T::default_epsilon(), 10_000)
        .ok_or_else(|| Error::numerical("SVD did not converge"))?;
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp_real(&svd.singular_values[a]));
    let s0 = svd.singular_values[order[0]];
    let sk = svd.singular_values[order[k - 1]];
    if !(s0 > T::zero()) || sk < T::tol(1e-12) * s0 {
        return Err(Error::degenerate(format!(
            "tangent vectors have rank < {k} (singular values {:.3e} / {:.3e})",
            s0.as_f64(),
            sk.as_f64()
        )));
    }
    let mut pcs = DMatrix::zeros(k, d);
    for (dst, &src) in order.iter().take(k).enumerate() {
        let mut row = v_t.row(src).into_owned();
        if row[row.transpose().iamax()] < T::zero() {
            row.neg_mut();
        }
        pcs.set_row(dst, &row);
    }
    Ok(pcs)
}

pub fn top2_pca<T: Real>(vectors: &DMatrix<T>) -> Result<DMatrix<T>> {
    principal_components(vectors, 2)
}

/// Cholesky factor of the second moment of `vectors` projected on the rows of `pcs`.
pub fn pc_space_cholesky<T: Real>(
    pcs: &DMatrix<T>,
    vectors: &DMatrix<T>,
    normalize_by_count: bool,
) -> Result<DMatrix<T>> {
    if pcs.ncols() != vectors.ncols() {
        return Err(Error::invalid("principal components and vectors differ in length"));
    }
    let z = vectors * pcs.transpose();
    let mut moment = z.transpose() * &z;
    if normalize_by_count {
        moment /= T::of(vectors.nrows() as f64);
    }
    let moment = spd_core::symmetrize(&moment);
    moment
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::degenerate("principal-component second moment is not positive definite"))
}

/// Aligns one class of source covariances to the same class of the target.
///
/// The output preserves input order.
pub fn align_class<T: Real>(
    source: &[SpdMatrix<T>],
    target: &[SpdMatrix<T>],
    class_id: Label,
    opts: &AlignOptions,
) -> Result<(Vec<SpdMatrix<T>>, AlignmentMap<T>)> {
    let min = opts.n_components + 1;
    for (who, set) in [("source", source), ("target", target)] {
        if set.len() < min {
            return Err(Error::degenerate(format!(
                "class {class_id}: {who} has {} trials, alignment needs at least {min}",
                set.len()
            )));
        }
    }
    let dim = target[0].dim();
    if source.iter().chain(target).any(|c| c.dim() != dim) {
        return Err(Error::invalid(format!("class {class_id}: channel counts differ")));
    }

    let ctx = |side: &str| format!("class {class_id} ({side})");
    let (source_mean, xs) = tangent_vectors_at_mean(source, &opts.mean).map_err(|e| e.context(ctx("source")))?;
    let (target_mean, xt) = tangent_vectors_at_mean(target, &opts.mean).map_err(|e| e.context(ctx("target")))?;
    let source_pcs = principal_components(&xs, opts.n_components).map_err(|e| e.context(ctx("source")))?;
    let target_pcs = principal_components(&xt, opts.n_components).map_err(|e| e.context(ctx("target")))?;
    let source_chol =
        pc_space_cholesky(&source_pcs, &xs, opts.normalize_by_count).map_err(|e| e.context(ctx("source")))?;
    let target_chol =
        pc_space_cholesky(&target_pcs, &xt, opts.normalize_by_count).map_err(|e| e.context(ctx("target")))?;

    let map = AlignmentMap {
        class_id,
        source_mean,
        target_mean,
        source_pcs,
        target_pcs,
        source_chol,
        target_chol,
    };
    let aligned_rows = map.transform_rows(&xs)?;
    let (sqrt, inv_sqrt) = map.target_mean.sqrt_pair()?;
    let mut aligned = Vec::with_capacity(source.len());
    for row in aligned_rows.row_iter() {
        let sym = spd_core::mat_from_vec(&row.transpose())?;
        aligned.push(spd_core::exp_map_with(&sqrt, &inv_sqrt, &sym)?);
    }
    Ok((aligned, map))
}

/// Aligns every class of a labelled source set to the target, one map per class.
pub fn align_subject<T: Real>(
    source_covs: &[SpdMatrix<T>],
    source_labels: &[Label],
    target_covs: &[SpdMatrix<T>],
    target_labels: &[Label],
    opts: &AlignOptions,
) -> Result<(Vec<SpdMatrix<T>>, Vec<AlignmentMap<T>>)> {
    if source_covs.len() != source_labels.len() || target_covs.len() != target_labels.len() {
        return Err(Error::invalid("covariance and label counts differ"));
    }
    let target_classes = class_alphabet(target_labels);
    let mut aligned: Vec<Option<SpdMatrix<T>>> = vec![None; source_covs.len()];
    let mut maps = Vec::new();
    for class in class_alphabet(source_labels) {
        if !target_classes.contains(&class) {
            return Err(Error::MissingClass { class });
        }
        let src_idx: Vec<usize> = (0..source_labels.len()).filter(|&i| source_labels[i] == class).collect();
        let src: Vec<SpdMatrix<T>> = src_idx.iter().map(|&i| source_covs[i].clone()).collect();
        let tgt: Vec<SpdMatrix<T>> = target_covs
            .iter()
            .zip(target_labels)
            .filter(|(_, &l)| l == class)
            .map(|(c, _)| c.clone())
            .collect();
        let (out, map) = align_class(&src, &tgt, class, opts)?;
        for (i, c) in src_idx.into_iter().zip(out) {
            aligned[i] = Some(c);
        }
        maps.push(map);
    }
    let aligned = aligned
        .into_iter()
        .map(|c| c.expect("every source trial belongs to exactly one class"))
        .collect();
    Ok((aligned, maps))
}

trait TotalCmpReal {
    fn total_cmp_real(&self, other: &Self) -> std::cmp::Ordering;
}

impl<T: Real> TotalCmpReal for T {
    fn total_cmp_real(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).unwrap_or(std::cmp::Ordering::Equal)
    }
}
