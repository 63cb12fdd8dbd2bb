//! Two-class linear discriminant analysis and majority voting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdaOptions {
    /// Ridge added to the pooled covariance, relative to `tr(Σ)/F`.
    pub ridge: f64,
    /// Use 1/2, 1/2 instead of the empirical class frequencies.
    pub equal_priors: bool,
}

impl Default for LdaOptions {
    fn default() -> Self {
        LdaOptions {
            ridge: 1e-6,
            equal_priors: false,
        }
    }
}

/// Gaussian LDA with a shared covariance. Index 0 is class `-1`, index 1 is class `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel<T: Real> {
    pub weights: DVector<T>,
    pub bias: T,
    /// `2 × F`, rows ordered (−1, +1).
    pub class_means: DMatrix<T>,
    pub shared_cov: DMatrix<T>,
    pub priors: [T; 2],
}

/// Fits LDA on `features` (`N × F`, one row per example) with `±1` labels.
///
/// `w = Σ⁻¹ (μ₊ − μ₋)` and `b = −wᵀ(μ₊ + μ₋)/2 + ln(π₊/π₋)`, so `wᵀx + b` is the
/// log posterior odds of class `+1` under the shared-covariance Gaussian model.
pub fn lda_fit<T: Real>(features: &DMatrix<T>, labels: &[Label], opts: &LdaOptions) -> Result<LdaModel<T>> {
    let (n, f) = features.shape();
    if labels.len() != n {
        return Err(Error::invalid(format!("{n} feature rows but {} labels", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l != 1 && l != -1) {
        return Err(Error::invalid(format!("LDA labels must be ±1, got {bad}")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("LDA needs examples of both classes"));
    }
    if n < f {
        log::warn!("LDA fit with {n} examples for {f} features");
    }

    let mut means = DMatrix::zeros(2, f);
    for (row, &l) in features.row_iter().zip(labels) {
        let k = usize::from(l == 1);
        let mut m = means.row_mut(k);
        m += row;
    }
    means.row_mut(0).unscale_mut(T::of(n_neg as f64));
    means.row_mut(1).unscale_mut(T::of(n_pos as f64));

    let mut scatter = [DMatrix::zeros(f, f), DMatrix::zeros(f, f)];
    for (row, &l) in features.row_iter().zip(labels) {
        let k = usize::from(l == 1);
        let d = (row - means.row(k)).transpose();
        scatter[k] += &d * d.transpose();
    }
    let dof = if n > 2 { n - 2 } else { n };
    let mut cov = (&scatter[0] + &scatter[1]) / T::of(dof as f64);
    let eps = T::of(opts.ridge) * cov.trace() / T::of(f as f64);
    for i in 0..f {
        cov[(i, i)] += eps;
    }

    let diff = (means.row(1) - means.row(0)).transpose();
    let chol = cov.clone().cholesky().ok_or_else(|| {
        Error::degenerate("pooled LDA covariance is singular; increase the ridge")
    })?;
    let weights = chol.solve(&diff);

    let priors = if opts.equal_priors {
        [T::of(0.5), T::of(0.5)]
    } else {
        [T::of(n_neg as f64 / n as f64), T::of(n_pos as f64 / n as f64)]
    };
    let mid = (means.row(0) + means.row(1)).transpose() * T::of(0.5);
    let bias = -weights.dot(&mid) + (priors[1] / priors[0]).ln();

    Ok(LdaModel {
        weights,
        bias,
        class_means: means,
        shared_cov: cov,
        priors,
    })
}

impl<T: Real> LdaModel<T> {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    /// Log posterior odds of class `+1`.
    pub fn decision(&self, x: &DVector<T>) -> Result<T> {
        if x.len() != self.n_features() {
            return Err(Error::invalid(format!(
                "feature length {} but model expects {}",
                x.len(),
                self.n_features()
            )));
        }
        Ok(self.weights.dot(x) + self.bias)
    }

    pub fn posterior(&self, x: &DVector<T>) -> Result<T> {
        self.decision(x).map(logistic)
    }

    pub fn predict(&self, x: &DVector<T>) -> Result<Label> {
        self.decision(x).map(|d| if d > T::zero() { 1 } else { -1 })
    }
}

pub fn lda_posterior<T: Real>(model: &LdaModel<T>, feature: &DVector<T>) -> Result<T> {
    model.posterior(feature)
}

fn logistic<T: Real>(d: T) -> T {
    if d >= T::zero() {
        T::one() / (T::one() + (-d).exp())
    } else {
        let e = d.exp();
        e / (T::one() + e)
    }
}

/// Most frequent label; any tie for the top count returns `tie_breaker`.
pub fn majority_vote(votes: &[Label], tie_breaker: Label) -> Label {
    let mut counts: Vec<(Label, usize)> = Vec::new();
    for &v in votes {
        match counts.iter_mut().find(|(l, _)| *l == v) {
            Some((_, c)) => *c += 1,
            None => counts.push((v, 1)),
        }
    }
    let Some(best) = counts.iter().map(|&(_, c)| c).max() else {
        return tie_breaker;
    };
    let mut top = counts.iter().filter(|&&(_, c)| c == best);
    let first = top.next().map(|&(l, _)| l).unwrap_or(tie_breaker);
    if top.next().is_some() {
        tie_breaker
    } else {
        first
    }
}
