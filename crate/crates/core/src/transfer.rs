//! Multi-subject transfer strategies and the CSP baselines.
//!
//! Every strategy produces a [`TransferModel`]: one or more members, each a full
//! classifier made of one CSP filter + LDA per binary task. Two-class problems
//! use a single task (second label of the alphabet is `+1`); more classes use
//! one-vs-rest with argmax over task posteriors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::alignment::{align_subject, AlignOptions};
use crate::classify::{lda_fit, majority_vote, LdaModel, LdaOptions};
use crate::csp::{self, binarize, class_alphabet, class_mean_covariance, SpatialFilter};
use crate::error::{Error, Result};
use crate::matrix_json::{from_rows, from_vec, to_rows, to_vec};
use crate::scalar::Real;
use crate::signal::{CovEstimator, Trial};
use crate::spd_core::SpdMatrix;
use crate::Label;

/// Trials, labels and covariances of one subject (one session/partition).
#[derive(Debug, Clone)]
pub struct SubjectData<T: Real> {
    pub subject_id: String,
    pub trials: Vec<Trial<T>>,
    pub labels: Vec<Label>,
    pub covariances: Vec<SpdMatrix<T>>,
}

impl<T: Real> SubjectData<T> {
    /// Computes one covariance per trial with `estimator`.
    pub fn new(
        subject_id: impl Into<String>,
        trials: Vec<Trial<T>>,
        labels: Vec<Label>,
        estimator: CovEstimator,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        let covariances = trials
            .iter()
            .enumerate()
            .map(|(i, t)| {
                estimator
                    .estimate(t)
                    .map_err(|e| e.context(format!("subject {subject_id}, trial {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(subject_id, trials, labels, covariances)
    }

    pub fn from_parts(
        subject_id: impl Into<String>,
        trials: Vec<Trial<T>>,
        labels: Vec<Label>,
        covariances: Vec<SpdMatrix<T>>,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        if trials.len() != labels.len() || trials.len() != covariances.len() {
            return Err(Error::invalid(format!(
                "subject {subject_id}: {} trials, {} labels, {} covariances",
                trials.len(),
                labels.len(),
                covariances.len()
            )));
        }
        if class_alphabet(&labels).len() < 2 {
            return Err(Error::invalid(format!("subject {subject_id}: fewer than two classes")));
        }
        let c = trials[0].n_channels();
        if trials.iter().any(|t| t.n_channels() != c) {
            return Err(Error::invalid(format!("subject {subject_id}: channel counts differ")));
        }
        Ok(SubjectData {
            subject_id,
            trials,
            labels,
            covariances,
        })
    }

    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    pub fn n_channels(&self) -> usize {
        self.trials[0].n_channels()
    }

    pub fn class_alphabet(&self) -> Vec<Label> {
        class_alphabet(&self.labels)
    }

    /// Trials at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Self::from_parts(
            self.subject_id.clone(),
            idx.iter().map(|&i| self.trials[i].clone()).collect(),
            idx.iter().map(|&i| self.labels[i]).collect(),
            idx.iter().map(|&i| self.covariances[i].clone()).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Ssf,
    Combine,
    Ensemble,
    #[serde(rename = "csp")]
    CspBaseline,
    #[serde(rename = "ccsp")]
    CompositeCsp,
}

impl Strategy {
    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Ssf => "ssf",
            Strategy::Combine => "combine",
            Strategy::Ensemble => "ensemble",
            Strategy::CspBaseline => "csp",
            Strategy::CompositeCsp => "ccsp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    pub n_pairs: usize,
    pub align: AlignOptions,
    pub lda: LdaOptions,
    /// SSF only: train LDA on target plus aligned-source covariances instead of
    /// target trials alone. Features are then taken from trace-normalized
    /// covariances, at training and prediction time.
    pub pooled_lda: bool,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            n_pairs: 3,
            align: AlignOptions::default(),
            lda: LdaOptions::default(),
            pooled_lda: false,
        }
    }
}

/// Filter + classifier for one binary task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel<T: Real> {
    /// Class mapped to `+1`.
    pub positive_class: Label,
    /// Filter applied to unseen trials.
    pub filter: SpatialFilter<T>,
    pub lda: LdaModel<T>,
    /// Number of feature rows the LDA was trained on.
    pub lda_training_rows: usize,
}

/// A complete classifier (one task per binary problem).
#[derive(Debug, Clone, PartialEq)]
pub struct Member<T: Real> {
    pub tasks: Vec<TaskModel<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferModel<T: Real> {
    pub strategy: Strategy,
    pub class_alphabet: Vec<Label>,
    pub members: Vec<Member<T>>,
    /// Member whose vote settles ensemble ties (the target-only member).
    pub tie_breaker: usize,
    /// Features from `X Xᵀ / tr(X Xᵀ)` rather than `X Xᵀ`.
    pub normalized_features: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T: Real> {
    pub label: Label,
    /// One score per class of the alphabet: posteriors for a single member,
    /// vote fractions for an ensemble.
    pub scores: Vec<T>,
}

/// Positive class of each binary task for an alphabet.
fn task_classes(alphabet: &[Label]) -> Result<Vec<Label>> {
    match alphabet.len() {
        0 | 1 => Err(Error::invalid("need at least two classes")),
        2 => Ok(vec![alphabet[1]]),
        _ => Ok(alphabet.to_vec()),
    }
}

fn feature_matrix<T: Real>(filter: &SpatialFilter<T>, trials: &[Trial<T>], normalized: bool) -> Result<DMatrix<T>> {
    let mut out = DMatrix::zeros(trials.len(), filter.n_features());
    for (i, t) in trials.iter().enumerate() {
        let f = trial_features(filter, t, normalized)?;
        out.row_mut(i).copy_from(&f.transpose());
    }
    Ok(out)
}

fn trial_features<T: Real>(filter: &SpatialFilter<T>, trial: &Trial<T>, normalized: bool) -> Result<DVector<T>> {
    if normalized {
        let s = trial.scatter();
        let tr = s.trace();
        csp::log_variance_from_scatter(filter, &(s / tr))
    } else {
        csp::log_variance_features(filter, trial).map(|f| f.values)
    }
}

fn covariance_features<T: Real>(filter: &SpatialFilter<T>, covs: &[SpdMatrix<T>]) -> Result<DMatrix<T>> {
    let mut out = DMatrix::zeros(covs.len(), filter.n_features());
    for (i, c) in covs.iter().enumerate() {
        let f = csp::log_variance_from_scatter(filter, c.as_matrix())?;
        out.row_mut(i).copy_from(&f.transpose());
    }
    Ok(out)
}

fn stack_rows<T: Real>(blocks: &[DMatrix<T>]) -> DMatrix<T> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    out
}

fn check_inputs<T: Real>(sources: &[SubjectData<T>], target: &SubjectData<T>) -> Result<()> {
    let c = target.n_channels();
    if let Some(s) = sources.iter().find(|s| s.n_channels() != c) {
        return Err(Error::invalid(format!(
            "source {} has {} channels, target {} has {c}",
            s.subject_id,
            s.n_channels(),
            target.subject_id
        )));
    }
    Ok(())
}

/// Each source's covariances aligned class by class to the target.
pub fn align_sources<T: Real>(
    sources: &[SubjectData<T>],
    target: &SubjectData<T>,
    opts: &AlignOptions,
) -> Result<Vec<Vec<SpdMatrix<T>>>> {
    check_inputs(sources, target)?;
    sources
        .iter()
        .map(|s| {
            align_subject(&s.covariances, &s.labels, &target.covariances, &target.labels, opts)
                .map(|(aligned, _)| aligned)
                .map_err(|e| e.context(format!("aligning {} to {}", s.subject_id, target.subject_id)))
        })
        .collect()
}

fn target_task<T: Real>(target: &SubjectData<T>, positive: Label, cfg: &TransferConfig) -> Result<TaskModel<T>> {
    let y = binarize(&target.labels, positive);
    let filter = csp::csp_from_covariances(&target.covariances, &y, cfg.n_pairs)?;
    let features = feature_matrix(&filter, &target.trials, false)?;
    let lda = lda_fit(&features, &y, &cfg.lda)?;
    Ok(TaskModel {
        positive_class: positive,
        filter,
        lda,
        lda_training_rows: target.n_trials(),
    })
}

fn single_member<T: Real>(strategy: Strategy, alphabet: Vec<Label>, tasks: Vec<TaskModel<T>>) -> TransferModel<T> {
    TransferModel {
        strategy,
        class_alphabet: alphabet,
        members: vec![Member { tasks }],
        tie_breaker: 0,
        normalized_features: false,
    }
}

/// Standard CSP + LDA on the target's training data.
pub fn csp_baseline<T: Real>(target: &SubjectData<T>, cfg: &TransferConfig) -> Result<TransferModel<T>> {
    let alphabet = target.class_alphabet();
    let tasks = task_classes(&alphabet)?
        .into_iter()
        .map(|c| target_task(target, c, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(single_member(Strategy::CspBaseline, alphabet, tasks))
}

/// Pooled target ∪ aligned-source covariances and labels.
fn pooled<T: Real>(
    sources: &[SubjectData<T>],
    aligned: &[Vec<SpdMatrix<T>>],
    target: &SubjectData<T>,
) -> (Vec<SpdMatrix<T>>, Vec<Label>) {
    let mut covs = target.covariances.clone();
    let mut labels = target.labels.clone();
    for (s, a) in sources.iter().zip(aligned) {
        covs.extend(a.iter().cloned());
        labels.extend(&s.labels);
    }
    (covs, labels)
}

/// Filter of the pooled set for one task.
fn ssf_filter<T: Real>(
    pooled_covs: &[SpdMatrix<T>],
    pooled_labels: &[Label],
    positive: Label,
    cfg: &TransferConfig,
) -> Result<SpatialFilter<T>> {
    csp::csp_from_covariances(pooled_covs, &binarize(pooled_labels, positive), cfg.n_pairs)
}

/// Single pooled filter: target ∪ aligned sources → CSP; LDA on target features.
pub fn rtcsp_ssf<T: Real>(
    sources: &[SubjectData<T>],
    target: &SubjectData<T>,
    cfg: &TransferConfig,
) -> Result<TransferModel<T>> {
    let aligned = align_sources(sources, target, &cfg.align)?;
    let (covs, labels) = pooled(sources, &aligned, target);
    let alphabet = target.class_alphabet();
    let mut tasks = Vec::new();
    for positive in task_classes(&alphabet)? {
        let filter = ssf_filter(&covs, &labels, positive, cfg)?;
        let (features, y) = if cfg.pooled_lda {
            (covariance_features(&filter, &covs)?, binarize(&labels, positive))
        } else {
            (
                feature_matrix(&filter, &target.trials, false)?,
                binarize(&target.labels, positive),
            )
        };
        let lda = lda_fit(&features, &y, &cfg.lda)?;
        tasks.push(TaskModel {
            positive_class: positive,
            filter,
            lda,
            lda_training_rows: features.nrows(),
        });
    }
    let mut model = single_member(Strategy::Ssf, alphabet, tasks);
    model.normalized_features = cfg.pooled_lda;
    Ok(model)
}

/// Per-source filters from aligned source covariances alone.
fn source_filters<T: Real>(
    sources: &[SubjectData<T>],
    aligned: &[Vec<SpdMatrix<T>>],
    positive: Label,
    cfg: &TransferConfig,
) -> Result<Vec<SpatialFilter<T>>> {
    sources
        .iter()
        .zip(aligned)
        .map(|(s, a)| {
            csp::csp_from_covariances(a, &binarize(&s.labels, positive), cfg.n_pairs)
                .map_err(|e| e.context(format!("source {}", s.subject_id)))
        })
        .collect()
}

/// Stacked features: every source filter and the target filter each contribute
/// `M` rows of target-trial features to one LDA; prediction uses the SSF filter.
pub fn rtcsp_combine<T: Real>(
    sources: &[SubjectData<T>],
    target: &SubjectData<T>,
    cfg: &TransferConfig,
) -> Result<TransferModel<T>> {
    let aligned = align_sources(sources, target, &cfg.align)?;
    let (covs, labels) = pooled(sources, &aligned, target);
    let alphabet = target.class_alphabet();
    let mut tasks = Vec::new();
    for positive in task_classes(&alphabet)? {
        let y_t = binarize(&target.labels, positive);
        let mut blocks = Vec::with_capacity(sources.len() + 1);
        for w in source_filters(sources, &aligned, positive, cfg)? {
            blocks.push(feature_matrix(&w, &target.trials, false)?);
        }
        let w_t = csp::csp_from_covariances(&target.covariances, &y_t, cfg.n_pairs)?;
        blocks.push(feature_matrix(&w_t, &target.trials, false)?);

        let features = stack_rows(&blocks);
        let y: Vec<Label> = std::iter::repeat_n(&y_t, blocks.len()).flatten().copied().collect();
        let lda = lda_fit(&features, &y, &cfg.lda)?;
        tasks.push(TaskModel {
            positive_class: positive,
            filter: ssf_filter(&covs, &labels, positive, cfg)?,
            lda,
            lda_training_rows: features.nrows(),
        });
    }
    Ok(single_member(Strategy::Combine, alphabet, tasks))
}

/// One member per aligned source filter plus the target member; majority vote.
pub fn rtcsp_ensemble<T: Real>(
    sources: &[SubjectData<T>],
    target: &SubjectData<T>,
    cfg: &TransferConfig,
) -> Result<TransferModel<T>> {
    let aligned = align_sources(sources, target, &cfg.align)?;
    let alphabet = target.class_alphabet();
    let positives = task_classes(&alphabet)?;

    let mut per_source: Vec<Vec<TaskModel<T>>> = vec![Vec::new(); sources.len()];
    let mut target_tasks = Vec::new();
    for &positive in &positives {
        let y_t = binarize(&target.labels, positive);
        for (k, w) in source_filters(sources, &aligned, positive, cfg)?.into_iter().enumerate() {
            let f = feature_matrix(&w, &target.trials, false)?;
            let lda = lda_fit(&f, &y_t, &cfg.lda)?;
            per_source[k].push(TaskModel {
                positive_class: positive,
                filter: w,
                lda,
                lda_training_rows: f.nrows(),
            });
        }
        target_tasks.push(target_task(target, positive, cfg)?);
    }
    let mut members: Vec<Member<T>> = per_source.into_iter().map(|tasks| Member { tasks }).collect();
    members.push(Member { tasks: target_tasks });
    Ok(TransferModel {
        strategy: Strategy::Ensemble,
        class_alphabet: alphabet,
        tie_breaker: members.len() - 1,
        members,
        normalized_features: false,
    })
}

/// CSP on `(1-λ) Σ_target + λ mean_i Σ_source_i` per binary class.
pub fn composite_csp<T: Real>(
    sources: &[SubjectData<T>],
    target: &SubjectData<T>,
    lambda: f64,
    cfg: &TransferConfig,
) -> Result<TransferModel<T>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda = {lambda} outside [0, 1]")));
    }
    check_inputs(sources, target)?;
    let lam = T::of(lambda);
    let alphabet = target.class_alphabet();
    let mut tasks = Vec::new();
    for positive in task_classes(&alphabet)? {
        let y_t = binarize(&target.labels, positive);
        let class_cov = |cls: Label| -> Result<SpdMatrix<T>> {
            let own = class_mean_covariance(&target.covariances, &y_t, cls)?;
            if sources.is_empty() {
                return Ok(own);
            }
            let mut acc = DMatrix::zeros(own.dim(), own.dim());
            for s in sources {
                let y_s = binarize(&s.labels, positive);
                acc += class_mean_covariance(&s.covariances, &y_s, cls)
                    .map_err(|e| e.context(format!("source {}", s.subject_id)))?
                    .as_matrix();
            }
            let src_mean = acc / T::of(sources.len() as f64);
            SpdMatrix::new(own.as_matrix() * (T::one() - lam) + src_mean * lam)
        };
        let neg = class_cov(-1)?;
        let pos = class_cov(1)?;
        let filter = csp::csp_filters(&neg, &pos, cfg.n_pairs)?;
        let features = feature_matrix(&filter, &target.trials, false)?;
        let lda = lda_fit(&features, &y_t, &cfg.lda)?;
        tasks.push(TaskModel {
            positive_class: positive,
            filter,
            lda,
            lda_training_rows: features.nrows(),
        });
    }
    Ok(single_member(Strategy::CompositeCsp, alphabet, tasks))
}

impl<T: Real> Member<T> {
    fn predict(&self, alphabet: &[Label], trial: &Trial<T>, normalized: bool) -> Result<Prediction<T>> {
        let mut posteriors = Vec::with_capacity(self.tasks.len());
        for task in &self.tasks {
            let f = trial_features(&task.filter, trial, normalized)?;
            posteriors.push(task.lda.posterior(&f)?);
        }
        if self.tasks.len() == 1 {
            let p = posteriors[0];
            let label = if p > T::of(0.5) { alphabet[1] } else { alphabet[0] };
            return Ok(Prediction {
                label,
                scores: vec![T::one() - p, p],
            });
        }
        let mut best = 0;
        for (k, p) in posteriors.iter().enumerate() {
            if *p > posteriors[best] {
                best = k;
            }
        }
        Ok(Prediction {
            label: self.tasks[best].positive_class,
            scores: posteriors,
        })
    }
}

impl<T: Real> TransferModel<T> {
    pub fn n_channels(&self) -> usize {
        self.members[0].tasks[0].filter.n_channels()
    }

    pub fn predict(&self, trial: &Trial<T>) -> Result<Prediction<T>> {
        if trial.n_channels() != self.n_channels() {
            return Err(Error::invalid(format!(
                "model expects {} channels, trial has {}",
                self.n_channels(),
                trial.n_channels()
            )));
        }
        if self.members.len() == 1 {
            return self.members[0].predict(&self.class_alphabet, trial, self.normalized_features);
        }
        let votes = self
            .members
            .iter()
            .map(|m| {
                m.predict(&self.class_alphabet, trial, self.normalized_features)
                    .map(|p| p.label)
            })
            .collect::<Result<Vec<_>>>()?;
        let label = majority_vote(&votes, votes[self.tie_breaker]);
        let n = T::of(votes.len() as f64);
        let scores = self
            .class_alphabet
            .iter()
            .map(|c| T::of(votes.iter().filter(|v| *v == c).count() as f64) / n)
            .collect();
        Ok(Prediction { label, scores })
    }

    pub fn to_doc(&self) -> TransferModelDoc {
        TransferModelDoc {
            format: MODEL_FORMAT.to_string(),
            strategy: self.strategy,
            class_alphabet: self.class_alphabet.clone(),
            tie_breaker: self.tie_breaker,
            normalized_features: self.normalized_features,
            members: self
                .members
                .iter()
                .map(|m| MemberDoc {
                    tasks: m.tasks.iter().map(TaskDoc::from_task).collect(),
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: &TransferModelDoc) -> Result<Self> {
        if doc.format != MODEL_FORMAT {
            return Err(Error::invalid(format!(
                "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
                doc.format
            )));
        }
        if doc.members.is_empty() || doc.tie_breaker >= doc.members.len() {
            return Err(Error::invalid("model document has no members or a bad tie breaker"));
        }
        let members = doc
            .members
            .iter()
            .map(|m| {
                m.tasks
                    .iter()
                    .map(TaskDoc::to_task)
                    .collect::<Result<Vec<_>>>()
                    .map(|tasks| Member { tasks })
            })
            .collect::<Result<Vec<_>>>()?;
        if members.iter().any(|m| m.tasks.is_empty()) {
            return Err(Error::invalid("model member without tasks"));
        }
        Ok(TransferModel {
            strategy: doc.strategy,
            class_alphabet: doc.class_alphabet.clone(),
            members,
            tie_breaker: doc.tie_breaker,
            normalized_features: doc.normalized_features,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("model document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: TransferModelDoc =
            serde_json::from_str(s).map_err(|e| Error::invalid(format!("model JSON: {e}")))?;
        Self::from_doc(&doc)
    }
}

pub const MODEL_FORMAT: &str = "rtcsp-model/1";

/// Versioned JSON document for a trained model; matrices are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferModelDoc {
    pub format: String,
    pub strategy: Strategy,
    pub class_alphabet: Vec<Label>,
    pub tie_breaker: usize,
    pub normalized_features: bool,
    pub members: Vec<MemberDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberDoc {
    pub tasks: Vec<TaskDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDoc {
    pub positive_class: Label,
    pub filter_weights: Vec<Vec<f64>>,
    pub filter_eigenvalues: Vec<f64>,
    pub n_pairs: usize,
    pub lda_weights: Vec<f64>,
    pub lda_bias: f64,
    pub lda_class_means: Vec<Vec<f64>>,
    pub lda_shared_cov: Vec<Vec<f64>>,
    pub lda_priors: [f64; 2],
    pub lda_training_rows: usize,
}

impl TaskDoc {
    fn from_task<T: Real>(t: &TaskModel<T>) -> Self {
        TaskDoc {
            positive_class: t.positive_class,
            filter_weights: to_rows(&t.filter.weights),
            filter_eigenvalues: to_vec(&t.filter.eigenvalues),
            n_pairs: t.filter.n_pairs,
            lda_weights: to_vec(&t.lda.weights),
            lda_bias: t.lda.bias.as_f64(),
            lda_class_means: to_rows(&t.lda.class_means),
            lda_shared_cov: to_rows(&t.lda.shared_cov),
            lda_priors: [t.lda.priors[0].as_f64(), t.lda.priors[1].as_f64()],
            lda_training_rows: t.lda_training_rows,
        }
    }

    fn to_task<T: Real>(&self) -> Result<TaskModel<T>> {
        let weights: DMatrix<T> = from_rows(&self.filter_weights)?;
        if weights.ncols() != 2 * self.n_pairs || self.lda_weights.len() != weights.ncols() {
            return Err(Error::invalid("task filter and LDA dimensions disagree"));
        }
        Ok(TaskModel {
            positive_class: self.positive_class,
            filter: SpatialFilter {
                weights,
                eigenvalues: from_vec(&self.filter_eigenvalues),
                n_pairs: self.n_pairs,
            },
            lda: LdaModel {
                weights: from_vec(&self.lda_weights),
                bias: T::of(self.lda_bias),
                class_means: from_rows(&self.lda_class_means)?,
                shared_cov: from_rows(&self.lda_shared_cov)?,
                priors: [T::of(self.lda_priors[0]), T::of(self.lda_priors[1])],
            },
            lda_training_rows: self.lda_training_rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::{random_matrix, random_orthogonal, rng};
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Two-class subject: latent sources with class-dependent variances, mixed by `mix`.
    fn subject(r: &mut impl Rng, id: &str, mix: &DMatrix<f64>, per_class: usize, classes: &[Label]) -> SubjectData<f64> {
        let c = mix.nrows();
        let mut trials = Vec::new();
        let mut labels = Vec::new();
        for (k, &cls) in classes.iter().enumerate() {
            for _ in 0..per_class {
                let mut var = vec![1.0; c];
                var[k % c] = 3.0;
                let jitter: Vec<f64> = (0..c).map(|_| (0.3 * r.sample::<f64, _>(StandardNormal)).exp()).collect();
                let src = DMatrix::from_fn(c, 120, |i, _| {
                    (var[i] * jitter[i]).sqrt() * r.sample::<f64, _>(StandardNormal)
                });
                trials.push(Trial::new(mix * src, 100.0).unwrap());
                labels.push(cls);
            }
        }
        SubjectData::new(id, trials, labels, CovEstimator::Plain).unwrap()
    }

    fn family(seed: u64, n_sources: usize, classes: &[Label]) -> (Vec<SubjectData<f64>>, SubjectData<f64>, SubjectData<f64>) {
        let mut r = rng(seed);
        let base = random_orthogonal(&mut r, 6);
        let shifted = |r: &mut rand_chacha::ChaCha8Rng| &base + random_matrix(r, 6, 6) * 0.1;
        let mix_t = shifted(&mut r);
        let sources = (0..n_sources)
            .map(|i| {
                let m = shifted(&mut r);
                subject(&mut r, &format!("S{i}"), &m, 12, classes)
            })
            .collect();
        let train = subject(&mut r, "T", &mix_t, 8, classes);
        let test = subject(&mut r, "T", &mix_t, 20, classes);
        (sources, train, test)
    }

    fn filters(m: &TransferModel<f64>) -> Vec<DMatrix<f64>> {
        m.members[0].tasks.iter().map(|t| t.filter.weights.clone()).collect()
    }

    #[test]
    fn zero_sources_degrade_to_baseline() {
        let (_, train, test) = family(60, 0, &[1, 2]);
        let cfg = TransferConfig::default();
        let base = csp_baseline(&train, &cfg).unwrap();
        let ssf = rtcsp_ssf(&[], &train, &cfg).unwrap();
        let comb = rtcsp_combine(&[], &train, &cfg).unwrap();
        let ens = rtcsp_ensemble(&[], &train, &cfg).unwrap();
        for m in [&ssf, &comb, &ens] {
            for (a, b) in filters(m).iter().zip(filters(&base)) {
                assert!((a - b).amax() < 1e-10);
            }
        }
        for t in &test.trials {
            let l = base.predict(t).unwrap().label;
            assert_eq!(ssf.predict(t).unwrap().label, l);
            assert_eq!(comb.predict(t).unwrap().label, l);
            assert_eq!(ens.predict(t).unwrap().label, l);
        }
    }

    #[test]
    fn ssf_pools_every_source_trial() {
        let (sources, train, _) = family(61, 4, &[1, 2]);
        let aligned = align_sources(&sources, &train, &AlignOptions::default()).unwrap();
        let (covs, labels) = pooled(&sources, &aligned, &train);
        let n: usize = sources.iter().map(|s| s.n_trials()).sum();
        assert_eq!(covs.len(), train.n_trials() + n);
        assert_eq!(labels.len(), covs.len());
    }

    #[test]
    fn self_transfer_keeps_eigenvalues() {
        let (_, train, _) = family(62, 0, &[1, 2]);
        let cfg = TransferConfig::default();
        let base = csp_baseline(&train, &cfg).unwrap();
        let copy = SubjectData { subject_id: "copy".into(), ..train.clone() };
        let ssf = rtcsp_ssf(&[copy], &train, &cfg).unwrap();
        let a = &base.members[0].tasks[0].filter.eigenvalues;
        let b = &ssf.members[0].tasks[0].filter.eigenvalues;
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= 0.02 * x.abs(), "{x} vs {y}");
        }
    }

    #[test]
    fn combine_bookkeeping() {
        let (sources, train, test) = family(63, 3, &[1, 2]);
        let cfg = TransferConfig::default();
        let comb = rtcsp_combine(&sources, &train, &cfg).unwrap();
        let ssf = rtcsp_ssf(&sources, &train, &cfg).unwrap();
        let task = &comb.members[0].tasks[0];
        assert_eq!(task.lda_training_rows, train.n_trials() * 4);
        assert_eq!(task.lda.n_features(), 2 * cfg.n_pairs);
        assert!((&task.filter.weights - &ssf.members[0].tasks[0].filter.weights).amax() <= 1e-12);
        assert_eq!(test.trials.len(), 40);
    }

    #[test]
    fn ensemble_has_one_member_per_source_plus_target() {
        let (sources, train, test) = family(64, 2, &[1, 2]);
        let ens = rtcsp_ensemble(&sources, &train, &TransferConfig::default()).unwrap();
        assert_eq!(ens.members.len(), 3);
        assert_eq!(ens.tie_breaker, 2);
        let mut swapped = ens.clone();
        swapped.members.swap(0, 1);
        for t in &test.trials {
            let p = ens.predict(t).unwrap();
            assert_eq!(swapped.predict(t).unwrap().label, p.label);
            assert!((p.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn composite_extremes() {
        let (sources, train, _) = family(65, 1, &[1, 2]);
        let cfg = TransferConfig::default();
        let base = csp_baseline(&train, &cfg).unwrap();
        let c0 = composite_csp(&sources, &train, 0.0, &cfg).unwrap();
        assert!((&filters(&c0)[0] - &filters(&base)[0]).amax() < 1e-10);

        let c1 = composite_csp(&sources, &train, 1.0, &cfg).unwrap();
        let only_source = csp::csp_from_covariances(&sources[0].covariances, &binarize(&sources[0].labels, 2), 3).unwrap();
        assert!((&filters(&c1)[0] - &only_source.weights).amax() < 1e-10);

        assert!(matches!(composite_csp(&sources, &train, 1.5, &cfg), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn composite_half_is_elementwise_average() {
        let diag = |v: &[f64]| SpdMatrix::from_diagonal(v).unwrap();
        let mk = |id: &str, a: SpdMatrix<f64>, b: SpdMatrix<f64>| {
            let trials = (0..4)
                .map(|i| Trial::new(DMatrix::from_fn(2, 10, |c, t| ((c + t + i) as f64).sin() + 2.0 * c as f64), 10.0).unwrap())
                .collect();
            SubjectData::from_parts(id, trials, vec![1, 1, 2, 2], vec![a.clone(), a, b.clone(), b]).unwrap()
        };
        let target = mk("T", diag(&[0.6, 0.4]), diag(&[0.3, 0.7]));
        let source = mk("S", diag(&[0.8, 0.2]), diag(&[0.5, 0.5]));
        let cfg = TransferConfig { n_pairs: 1, ..TransferConfig::default() };
        let m = composite_csp(&[source], &target, 0.5, &cfg).unwrap();
        // class −1 (label 1) → diag(0.7, 0.3); class +1 (label 2) → diag(0.4, 0.6)
        let expected = csp::csp_filters(&diag(&[0.7, 0.3]), &diag(&[0.4, 0.6]), 1).unwrap();
        let got = &m.members[0].tasks[0].filter;
        assert!((&got.eigenvalues - &expected.eigenvalues).amax() < 1e-14);
        assert!((got.eigenvalues[0] - 0.7 / 1.1).abs() < 1e-14);
    }

    #[test]
    fn baseline_is_deterministic_and_sized() {
        let (_, train, _) = family(66, 0, &[1, 2]);
        let a = csp_baseline(&train, &TransferConfig::default()).unwrap();
        let b = csp_baseline(&train, &TransferConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.members[0].tasks[0].filter.n_features(), 6);
    }

    #[test]
    fn multiclass_scores_and_tasks() {
        let (sources, train, test) = family(67, 2, &[1, 2, 3, 4]);
        let cfg = TransferConfig { n_pairs: 2, ..TransferConfig::default() };
        for m in [
            csp_baseline(&train, &cfg).unwrap(),
            rtcsp_ssf(&sources, &train, &cfg).unwrap(),
            rtcsp_combine(&sources, &train, &cfg).unwrap(),
        ] {
            assert_eq!(m.members[0].tasks.len(), 4);
            let p = m.predict(&test.trials[0]).unwrap();
            assert_eq!(p.scores.len(), 4);
            assert!(p.scores.iter().all(|s| (0.0..=1.0).contains(s)));
        }
    }

    #[test]
    fn swapped_classes_swap_scores() {
        let (_, train, test) = family(68, 0, &[1, 2]);
        let swapped_labels: Vec<Label> = train.labels.iter().map(|&l| 3 - l).collect();
        let swapped = SubjectData { labels: swapped_labels, ..train.clone() };
        let a = csp_baseline(&train, &TransferConfig::default()).unwrap();
        let b = csp_baseline(&swapped, &TransferConfig::default()).unwrap();
        for t in &test.trials {
            let pa = a.predict(t).unwrap();
            let pb = b.predict(t).unwrap();
            assert!((pa.scores[0] - pb.scores[1]).abs() < 1e-9);
            assert!((pa.scores[1] - pb.scores[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn pooled_lda_variant_trains_on_all_covariances() {
        let (sources, train, test) = family(69, 2, &[1, 2]);
        let cfg = TransferConfig { pooled_lda: true, ..TransferConfig::default() };
        let m = rtcsp_ssf(&sources, &train, &cfg).unwrap();
        let n: usize = sources.iter().map(|s| s.n_trials()).sum::<usize>() + train.n_trials();
        assert_eq!(m.members[0].tasks[0].lda_training_rows, n);
        assert!(m.normalized_features);
        m.predict(&test.trials[0]).unwrap();
    }

    #[test]
    fn model_json_round_trip_predicts_identically() {
        let (sources, train, test) = family(70, 2, &[1, 2]);
        let m = rtcsp_ensemble(&sources, &train, &TransferConfig::default()).unwrap();
        let json = m.to_json();
        assert!(json.contains("rtcsp-model/1"));
        let back = TransferModel::<f64>::from_json(&json).unwrap();
        for t in &test.trials {
            assert_eq!(back.predict(t).unwrap().label, m.predict(t).unwrap().label);
        }
        assert!(TransferModel::<f64>::from_json(&json.replace("rtcsp-model/1", "rtcsp-model/9")).is_err());
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let (_, train, _) = family(71, 0, &[1, 2]);
        let m = csp_baseline(&train, &TransferConfig::default()).unwrap();
        let t = Trial::new(DMatrix::from_element(3, 50, 1.0), 100.0).unwrap();
        assert!(matches!(m.predict(&t), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn well_separated_trial_is_recognised() {
        let (_, train, _) = family(72, 0, &[1, 2]);
        let m = csp_baseline(&train, &TransferConfig::default()).unwrap();
        let correct = train
            .trials
            .iter()
            .zip(&train.labels)
            .filter(|(t, &l)| m.predict(t).unwrap().label == l)
            .count();
        assert!(correct as f64 >= 0.9 * train.n_trials() as f64);
    }
}
