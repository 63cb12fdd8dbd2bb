//! Experiment harness: leave-one-subject-as-target accuracy tables, λ tuning
//! for composite CSP, limited-data learning curves and the mean-variance-ratio
//! (MVR) study of filter generalization.
//!
//! Subjects and runs are processed in parallel with rayon; results are always
//! collected in subject/run order, so output does not depend on thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};

use crate::csp::{binarize, class_alphabet, csp_from_covariances, SpatialFilter};
use crate::data_io::{subsample_training, Dataset};
use crate::error::{Error, Result};
use crate::signal::Trial;
use crate::transfer::{
    composite_csp, csp_baseline, rtcsp_combine, rtcsp_ensemble, rtcsp_ssf, SubjectData, TransferConfig,
    TransferModel,
};
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Csp,
    Ssf,
    Combine,
    Ensemble,
    Ccsp,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Csp, Method::Ssf, Method::Combine, Method::Ensemble, Method::Ccsp];

    pub fn name(self) -> &'static str {
        match self {
            Method::Csp => "csp",
            Method::Ssf => "ssf",
            Method::Combine => "combine",
            Method::Ensemble => "ensemble",
            Method::Ccsp => "ccsp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvScheme {
    Kfold { k: usize },
    Loocv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaConfig {
    /// Fixed λ; when absent λ is tuned on the target's training data.
    pub fixed: Option<f64>,
    pub grid: Vec<f64>,
    pub scheme: CvScheme,
}

impl Default for LambdaConfig {
    fn default() -> Self {
        LambdaConfig {
            fixed: None,
            grid: (1..=9).map(|i| i as f64 / 10.0).collect(),
            scheme: CvScheme::Kfold { k: 10 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub transfer: TransferConfig,
    pub lambda: LambdaConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            transfer: TransferConfig::default(),
            lambda: LambdaConfig::default(),
            seed: 0,
        }
    }
}

/// SplitMix64 over `base` and `parts`: independent, reproducible sub-seeds.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// Trains `method` for `target` with `sources`; `seed` drives λ tuning.
pub fn fit_method(
    method: Method,
    sources: &[SubjectData<f64>],
    target: &SubjectData<f64>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<TransferModel<f64>> {
    let t = &cfg.transfer;
    match method {
        Method::Csp => csp_baseline(target, t),
        Method::Ssf => rtcsp_ssf(sources, target, t),
        Method::Combine => rtcsp_combine(sources, target, t),
        Method::Ensemble => rtcsp_ensemble(sources, target, t),
        Method::Ccsp => {
            let lambda = match cfg.lambda.fixed {
                Some(l) => l,
                None => tune_lambda(sources, target, cfg.lambda.scheme, &cfg.lambda.grid, t, seed)?.lambda,
            };
            composite_csp(sources, target, lambda, t)
        }
    }
}

/// Percentage of `test` trials labelled correctly.
pub fn accuracy(model: &TransferModel<f64>, test: &SubjectData<f64>) -> Result<f64> {
    let mut correct = 0usize;
    for (trial, &label) in test.trials.iter().zip(&test.labels) {
        if model.predict(trial)?.label == label {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / test.n_trials() as f64)
}

/// Every subject except `target`, with full training data.
pub fn sources_for(dataset: &Dataset, target: usize) -> Vec<SubjectData<f64>> {
    dataset
        .subjects
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target)
        .map(|(_, s)| s.train.clone())
        .collect()
}

/// One accuracy per subject (as target), in subject order.
///
/// `train_fraction` optionally subsamples each target's training data with a
/// per-subject seed derived from `(cfg.seed, subject)`.
pub fn evaluate_method(
    method: Method,
    dataset: &Dataset,
    cfg: &EvalConfig,
    train_fraction: Option<f64>,
) -> Vec<Result<f64>> {
    (0..dataset.n_subjects())
        .into_par_iter()
        .map(|k| evaluate_cell(method, dataset, k, cfg, train_fraction))
        .collect()
}

fn evaluate_cell(
    method: Method,
    dataset: &Dataset,
    k: usize,
    cfg: &EvalConfig,
    train_fraction: Option<f64>,
) -> Result<f64> {
    let split = &dataset.subjects[k];
    let target = match train_fraction {
        Some(p) => subsample_training(&split.train, p, derive_seed(cfg.seed, &[k as u64, 0]))?,
        None => split.train.clone(),
    };
    let sources = sources_for(dataset, k);
    let model = fit_method(method, &sources, &target, cfg, derive_seed(cfg.seed, &[k as u64, 1]))?;
    accuracy(&model, &split.test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub subject: String,
    pub method: Method,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub dataset: String,
    pub methods: Vec<Method>,
    pub subjects: Vec<String>,
    /// `cells[subject][method]`, percent; `None` where training or prediction failed.
    pub cells: Vec<Vec<Option<f64>>>,
    pub failures: Vec<CellFailure>,
}

impl AccuracyTable {
    /// Mean over subjects of each method's successful cells.
    pub fn means(&self) -> Vec<Option<f64>> {
        (0..self.methods.len())
            .map(|m| {
                let ok: Vec<f64> = self.cells.iter().filter_map(|row| row[m]).collect();
                (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
            })
            .collect()
    }

    pub fn all_failed(&self) -> bool {
        self.cells.iter().flatten().all(Option::is_none)
    }

    /// `subject,<method>...` rows followed by a `mean` row; failed cells are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject");
        for m in &self.methods {
            out.push(',');
            out.push_str(m.name());
        }
        out.push('\n');
        let cell = |v: &Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        for (s, row) in self.subjects.iter().zip(&self.cells) {
            out.push_str(s);
            for v in row {
                out.push(',');
                out.push_str(&cell(v));
            }
            out.push('\n');
        }
        out.push_str("mean");
        for v in self.means() {
            out.push(',');
            out.push_str(&cell(&v));
        }
        out.push('\n');
        out
    }
}

pub fn evaluate(dataset: &Dataset, methods: &[Method], cfg: &EvalConfig, train_fraction: Option<f64>) -> AccuracyTable {
    let subjects = dataset.subject_ids();
    let columns: Vec<Vec<Result<f64>>> = methods
        .iter()
        .map(|&m| evaluate_method(m, dataset, cfg, train_fraction))
        .collect();
    let mut cells = vec![vec![None; methods.len()]; subjects.len()];
    let mut failures = Vec::new();
    for (j, col) in columns.into_iter().enumerate() {
        for (i, r) in col.into_iter().enumerate() {
            match r {
                Ok(acc) => cells[i][j] = Some(acc),
                Err(e) => {
                    log::warn!("{} on {}: {e}", methods[j].name(), subjects[i]);
                    failures.push(CellFailure {
                        subject: subjects[i].clone(),
                        method: methods[j],
                        error: e.to_string(),
                    });
                }
            }
        }
    }
    AccuracyTable {
        dataset: dataset.name.clone(),
        methods: methods.to_vec(),
        subjects,
        cells,
        failures,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub lambda: f64,
    /// Mean validation error per grid value (same order as the grid).
    pub errors: Vec<f64>,
    pub folds_used: usize,
    pub folds_skipped: usize,
}

/// Stratified folds: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in class_alphabet(labels) {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds.retain(|f| !f.is_empty());
    folds
}

/// Chooses λ for composite CSP by cross-validation on the target's training
/// trials, with every source subject's full data in each fit.
///
/// Ties go to the smaller λ. Folds whose training part cannot be fit (e.g. a
/// class missing) are skipped with a warning.
pub fn tune_lambda(
    sources: &[SubjectData<f64>],
    target: &SubjectData<f64>,
    scheme: CvScheme,
    grid: &[f64],
    cfg: &TransferConfig,
    seed: u64,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    if let Some(bad) = grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::invalid(format!("lambda {bad} outside [0, 1]")));
    }
    let n = target.n_trials();
    let folds = match scheme {
        CvScheme::Kfold { k } if k >= 2 => stratified_folds(&target.labels, k.min(n), seed),
        CvScheme::Kfold { k } => return Err(Error::invalid(format!("k-fold needs k ≥ 2, got {k}"))),
        CvScheme::Loocv => (0..n).map(|i| vec![i]).collect(),
    };

    let mut prepared = Vec::new();
    let mut skipped = 0;
    for (f, held_out) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = (0..n).filter(|i| held_out.binary_search(i).is_err()).collect();
        let train_classes = class_alphabet(&train_idx.iter().map(|&i| target.labels[i]).collect::<Vec<_>>());
        let missing = held_out.iter().any(|&i| !train_classes.contains(&target.labels[i]));
        match target.subset(&train_idx) {
            Ok(train) if !missing && train_classes == target.class_alphabet() => prepared.push((train, held_out)),
            _ => {
                log::warn!("fold {f}: a class is missing from the training part, skipped");
                skipped += 1;
            }
        }
    }

    let per_lambda: Vec<(f64, usize)> = grid
        .par_iter()
        .map(|&lambda| {
            let mut err = 0.0;
            let mut used = 0;
            for (train, held_out) in &prepared {
                let model = match composite_csp(sources, train, lambda, cfg) {
                    Ok(m) => m,
                    Err(e) => {
                        log::warn!("lambda {lambda}: fold skipped: {e}");
                        continue;
                    }
                };
                let mut wrong = 0;
                let mut ok = true;
                for &i in held_out.iter() {
                    match model.predict(&target.trials[i]) {
                        Ok(p) => wrong += usize::from(p.label != target.labels[i]),
                        Err(_) => ok = false,
                    }
                }
                if ok {
                    err += wrong as f64 / held_out.len() as f64;
                    used += 1;
                }
            }
            (if used > 0 { err / used as f64 } else { f64::NAN }, used)
        })
        .collect();

    let folds_used = per_lambda.iter().map(|p| p.1).max().unwrap_or(0);
    if folds_used == 0 {
        return Err(Error::invalid("every cross-validation fold was skipped"));
    }
    let mut best: Option<(f64, f64)> = None;
    for (&lambda, &(e, _)) in grid.iter().zip(&per_lambda) {
        if e.is_nan() {
            continue;
        }
        best = match best {
            Some((be, bl)) if be < e || (be == e && bl <= lambda) => Some((be, bl)),
            _ => Some((e, lambda)),
        };
    }
    let (_, lambda) = best.expect("at least one lambda evaluated");
    Ok(TuneResult {
        lambda,
        errors: per_lambda.iter().map(|p| p.0).collect(),
        folds_used,
        folds_skipped: skipped,
    })
}

/// Centered moving average; near the ends the window shrinks instead of padding.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window > series.len() {
        return Err(Error::invalid(format!(
            "window {window} must lie in [1, {}]",
            series.len()
        )));
    }
    let left = (window - 1) / 2;
    let right = window / 2;
    let n = series.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(n - 1);
            series[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect())
}

/// A tenth of the series length, rounded, at least 1.
pub fn default_window(len: usize) -> usize {
    ((len as f64 / 10.0).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub method: Method,
    /// Mean accuracy over seeds and subjects; `None` where the fraction was skipped.
    pub raw: Vec<Option<f64>>,
    /// Moving average over the points that were computed.
    pub smoothed: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub dataset: String,
    pub fractions: Vec<f64>,
    pub window: usize,
    pub series: Vec<CurveSeries>,
    pub skipped: Vec<String>,
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,fraction,accuracy,smoothed\n");
        for s in &self.series {
            for (i, p) in self.fractions.iter().enumerate() {
                let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
                out.push_str(&format!("{},{p},{},{}\n", s.method.name(), f(s.raw[i]), f(s.smoothed[i])));
            }
        }
        out
    }
}

/// Accuracy as a function of the fraction of target training data kept.
///
/// For each `(seed, fraction)` every subject is evaluated as a target with its
/// training data subsampled; accuracies are averaged over subjects and then
/// over seeds. A `(fraction, subject)` that fails (e.g. too few trials) is
/// left out of the averages and listed in `skipped`.
pub fn learning_curve(
    dataset: &Dataset,
    methods: &[Method],
    fractions: &[f64],
    seeds: &[u64],
    cfg: &EvalConfig,
    window: Option<usize>,
) -> Result<LearningCurve> {
    if fractions.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("need at least one fraction and one seed"));
    }
    if fractions.windows(2).any(|w| w[0] >= w[1]) || fractions.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(Error::invalid("fractions must be ascending within (0, 1]"));
    }
    let window = window.unwrap_or_else(|| default_window(fractions.len()));
    let mut skipped = Vec::new();
    let mut series = Vec::new();
    for &method in methods {
        let mut raw = Vec::with_capacity(fractions.len());
        for &p in fractions {
            let mut acc = Vec::new();
            for &seed in seeds {
                let run_cfg = EvalConfig { seed, ..cfg.clone() };
                let cells = evaluate_method(method, dataset, &run_cfg, Some(p));
                let ok: Vec<f64> = cells
                    .into_iter()
                    .zip(dataset.subject_ids())
                    .filter_map(|(r, id)| match r {
                        Ok(a) => Some(a),
                        Err(e) => {
                            skipped.push(format!("{} p={p} seed={seed} {id}: {e}", method.name()));
                            None
                        }
                    })
                    .collect();
                if !ok.is_empty() {
                    acc.push(ok.iter().sum::<f64>() / ok.len() as f64);
                }
            }
            if acc.is_empty() {
                log::warn!("{} at fraction {p}: no subject could be evaluated", method.name());
            }
            raw.push((!acc.is_empty()).then(|| acc.iter().sum::<f64>() / acc.len() as f64));
        }
        let present: Vec<f64> = raw.iter().flatten().copied().collect();
        let smooth = if present.is_empty() {
            vec![]
        } else {
            moving_average(&present, window.min(present.len()))?
        };
        let mut it = smooth.into_iter();
        let smoothed = raw.iter().map(|r| r.and_then(|_| it.next())).collect();
        series.push(CurveSeries { method, raw, smoothed });
    }
    Ok(LearningCurve {
        dataset: dataset.name.clone(),
        fractions: fractions.to_vec(),
        window,
        series,
        skipped,
    })
}

/// Ratio of the larger to the smaller projected variance under the single
/// filter pair of `filter`. Variances are mean squares (no centering).
pub fn mvr_trial(filter: &SpatialFilter<f64>, trial: &Trial<f64>) -> Result<f64> {
    if filter.n_pairs != 1 {
        return Err(Error::invalid(format!("MVR needs one filter pair, got {}", filter.n_pairs)));
    }
    if filter.n_channels() != trial.n_channels() {
        return Err(Error::invalid("filter and trial channel counts differ"));
    }
    let proj = filter.weights.transpose() * &trial.data;
    let t = trial.n_samples() as f64;
    let v1 = proj.row(0).norm_squared() / t;
    let v2 = proj.row(1).norm_squared() / t;
    if !(v1 > 0.0 && v2 > 0.0) {
        return Err(Error::degenerate("projected signal has zero variance"));
    }
    Ok(v1.max(v2) / v1.min(v2))
}

/// Mean of [`mvr_trial`] over a subject's trials.
pub fn mvr_subject(filter: &SpatialFilter<f64>, trials: &[Trial<f64>]) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::invalid("no trials"));
    }
    let mut sum = 0.0;
    for t in trials {
        sum += mvr_trial(filter, t)?;
    }
    Ok(sum / trials.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvrRun {
    pub run: usize,
    pub base: f64,
    pub transfer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvrReport {
    pub fraction: f64,
    pub runs: Vec<MvrRun>,
    pub failed_runs: Vec<(usize, String)>,
    pub mean_base: f64,
    pub mean_transfer: f64,
    pub se_base: f64,
    pub se_transfer: f64,
    /// Paired t statistic of `transfer − base`.
    pub t_statistic: f64,
    /// One-sided p-value for mean(`transfer − base`) > 0.
    pub p_value: f64,
    /// One-sided sign test on the same differences.
    pub sign_test_p_value: f64,
    pub alpha: f64,
    pub significant: bool,
}

impl MvrReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,run,mvr_base,mvr_transfer\n");
        for r in &self.runs {
            out.push_str(&format!("{},{},{:.10},{:.10}\n", self.fraction, r.run, r.base, r.transfer));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MvrConfig {
    pub runs: usize,
    pub alpha: f64,
    /// Filter pairs used for both arms.
    pub n_pairs: usize,
}

impl Default for MvrConfig {
    fn default() -> Self {
        MvrConfig {
            runs: 50,
            alpha: 0.05 / 9.0,
            n_pairs: 1,
        }
    }
}

/// Per run: subsample every target's training data at `fraction`, build the
/// target-only CSP filter and the pooled transfer filter (all sources at full
/// size), average [`mvr_subject`] on each subject's test trials across
/// subjects. Runs with any failing subject are excluded and listed.
pub fn mvr_experiment(
    dataset: &Dataset,
    fraction: f64,
    mvr: &MvrConfig,
    cfg: &EvalConfig,
) -> Result<MvrReport> {
    if mvr.runs == 0 {
        return Err(Error::invalid("runs must be positive"));
    }
    for s in &dataset.subjects {
        if s.train.class_alphabet().len() != 2 {
            return Err(Error::invalid("MVR is defined for two-class datasets"));
        }
    }
    let tcfg = TransferConfig {
        n_pairs: mvr.n_pairs,
        ..cfg.transfer
    };
    let outcomes: Vec<Result<(f64, f64)>> = (0..mvr.runs)
        .into_par_iter()
        .map(|run| {
            let mut base = 0.0;
            let mut transfer = 0.0;
            for (k, split) in dataset.subjects.iter().enumerate() {
                let seed = derive_seed(cfg.seed, &[run as u64, k as u64]);
                let target = subsample_training(&split.train, fraction, seed)?;
                let positive = target.class_alphabet()[1];
                let w_base = csp_from_covariances(&target.covariances, &binarize(&target.labels, positive), mvr.n_pairs)?;
                let sources = sources_for(dataset, k);
                let rt = rtcsp_ssf(&sources, &target, &tcfg)?;
                let w_rt = &rt.members[0].tasks[0].filter;
                base += mvr_subject(&w_base, &split.test.trials)?;
                transfer += mvr_subject(w_rt, &split.test.trials)?;
            }
            let n = dataset.n_subjects() as f64;
            Ok((base / n, transfer / n))
        })
        .collect();

    let mut runs = Vec::new();
    let mut failed_runs = Vec::new();
    for (run, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok((base, transfer)) => runs.push(MvrRun { run, base, transfer }),
            Err(e) => failed_runs.push((run, e.to_string())),
        }
    }
    if runs.is_empty() {
        return Err(Error::invalid("every MVR run failed"));
    }
    let base: Vec<f64> = runs.iter().map(|r| r.base).collect();
    let rt: Vec<f64> = runs.iter().map(|r| r.transfer).collect();
    let diffs: Vec<f64> = runs.iter().map(|r| r.transfer - r.base).collect();
    let (t_statistic, p_value) = paired_one_sided_t(&diffs);
    let sign_test_p_value = sign_test(&diffs);
    Ok(MvrReport {
        fraction,
        mean_base: mean(&base),
        mean_transfer: mean(&rt),
        se_base: std_error(&base),
        se_transfer: std_error(&rt),
        t_statistic,
        p_value,
        sign_test_p_value,
        alpha: mvr.alpha,
        significant: p_value < mvr.alpha,
        runs,
        failed_runs,
    })
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

pub fn std_error(x: &[f64]) -> f64 {
    sample_sd(x) / (x.len() as f64).sqrt()
}

/// `(t, p)` for H₁: mean(d) > 0. Constant differences give `p` = 0, 0.5 or 1
/// according to the sign of the mean.
pub fn paired_one_sided_t(d: &[f64]) -> (f64, f64) {
    let m = mean(d);
    let se = std_error(d);
    if d.len() < 2 || se == 0.0 {
        let p = if m > 0.0 {
            0.0
        } else if m < 0.0 {
            1.0
        } else {
            0.5
        };
        let t = if m == 0.0 { 0.0 } else { m.signum() * f64::INFINITY };
        return (t, p);
    }
    let t = m / se;
    let dist = StudentsT::new(0.0, 1.0, (d.len() - 1) as f64).expect("valid degrees of freedom");
    (t, dist.sf(t))
}

/// One-sided sign test on the nonzero differences; 1 if all are zero.
pub fn sign_test(d: &[f64]) -> f64 {
    let pos = d.iter().filter(|&&x| x > 0.0).count() as u64;
    let n = d.iter().filter(|&&x| x != 0.0).count() as u64;
    if n == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n).expect("valid binomial");
    if pos == 0 {
        1.0
    } else {
        b.sf(pos - 1)
    }
}

/// Two-sided 95% interval of the percentage correct under guessing among
/// `n_classes` on `n_trials` trials.
pub fn chance_band(n_trials: u64, n_classes: usize) -> (f64, f64) {
    let b = Binomial::new(1.0 / n_classes as f64, n_trials).expect("valid binomial");
    let lo = b.inverse_cdf(0.025);
    let hi = b.inverse_cdf(0.975);
    (100.0 * lo as f64 / n_trials as f64, 100.0 * hi as f64 / n_trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{synth_generate, SubjectShift, SynthConfig};
    use nalgebra::{DMatrix, DVector};

    fn small(seed: u64) -> Dataset {
        synth_generate(&SynthConfig {
            n_subjects: 3,
            trials_per_class: 12,
            test_trials_per_class: 10,
            n_samples: 128,
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn identity_pair() -> SpatialFilter<f64> {
        SpatialFilter {
            weights: DMatrix::identity(2, 2),
            eigenvalues: DVector::from_vec(vec![0.8, 0.2]),
            n_pairs: 1,
        }
    }

    #[test]
    fn moving_average_oracle() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0, 5.0], 3).unwrap(), vec![1.5, 2.0, 3.0, 4.0, 4.5]);
        let x = [3.0, 1.0, 4.0, 1.0, 5.0];
        assert_eq!(moving_average(&x, 1).unwrap(), x.to_vec());
        assert_eq!(moving_average(&[2.0; 7], 5).unwrap(), vec![2.0; 7]);
        assert!(moving_average(&x, 6).is_err());
        assert!(moving_average(&x, 0).is_err());
        assert_eq!(default_window(91), 9);
        assert_eq!(default_window(3), 1);
    }

    #[test]
    fn mvr_trial_cases() {
        let data = DMatrix::from_row_slice(2, 4, &[2.0, -2.0, 2.0, -2.0, 1.0, 1.0, -1.0, -1.0]);
        let t = Trial::new(data.clone(), 10.0).unwrap();
        assert!((mvr_trial(&identity_pair(), &t).unwrap() - 4.0).abs() < 1e-15);
        let scaled = Trial::new(data * 3.7, 10.0).unwrap();
        assert!((mvr_trial(&identity_pair(), &scaled).unwrap() - 4.0).abs() < 1e-12);
        let eq = Trial::new(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]), 10.0).unwrap();
        assert_eq!(mvr_trial(&identity_pair(), &eq).unwrap(), 1.0);
        let dead = Trial::new(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]), 10.0).unwrap();
        assert!(matches!(mvr_trial(&identity_pair(), &dead), Err(Error::DegenerateInput(_))));
        let three = SpatialFilter { n_pairs: 3, ..identity_pair() };
        assert!(mvr_trial(&three, &t).is_err());
    }

    #[test]
    fn mvr_averages_trials_then_subjects() {
        let mk = |a: f64| Trial::new(DMatrix::from_row_slice(2, 2, &[a, -a, 1.0, 1.0]), 10.0).unwrap();
        // subject A: ratios 4 and 9 → 6.5; subject B: ratio 16 → 16; overall 11.25
        let a = mvr_subject(&identity_pair(), &[mk(2.0), mk(3.0)]).unwrap();
        let b = mvr_subject(&identity_pair(), &[mk(4.0)]).unwrap();
        assert!((a - 6.5).abs() < 1e-12);
        assert!(((a + b) / 2.0 - 11.25).abs() < 1e-12);
    }

    #[test]
    fn t_test_and_sign_test() {
        let (t, p) = paired_one_sided_t(&[0.0; 10]);
        assert_eq!((t, p), (0.0, 0.5));
        let d = [1.0, 2.0, 3.0, 4.0];
        let (t, p) = paired_one_sided_t(&d);
        // mean 2.5, sd sqrt(5/3), se sd/2
        let t_exp = 2.5 / ((5.0f64 / 3.0).sqrt() / 2.0);
        assert!((t - t_exp).abs() < 1e-12);
        assert!(p > 0.0 && p < 0.05);
        let (_, p_neg) = paired_one_sided_t(&[-1.0, -2.0, -3.0, -4.0]);
        assert!((p + p_neg - 1.0).abs() < 1e-12);
        assert!((sign_test(&[1.0, 1.0, 1.0]) - 0.125).abs() < 1e-12);
        assert_eq!(sign_test(&[0.0, 0.0]), 1.0);
        assert_eq!(sign_test(&[-1.0, -2.0]), 1.0);
    }

    #[test]
    fn derived_seeds_differ_and_repeat() {
        assert_eq!(derive_seed(1, &[2, 3]), derive_seed(1, &[2, 3]));
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_ne!(derive_seed(1, &[0]), derive_seed(2, &[0]));
    }

    #[test]
    fn stratified_folds_cover_everything_once() {
        let labels: Vec<Label> = (0..23).map(|i| (i % 3) as Label).collect();
        let folds = stratified_folds(&labels, 5, 7);
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        for f in &folds {
            let classes = class_alphabet(&f.iter().map(|&i| labels[i]).collect::<Vec<_>>());
            assert!(classes.len() >= 2);
        }
    }

    #[test]
    fn table_means_and_csv() {
        let d = small(1);
        let cfg = EvalConfig {
            lambda: LambdaConfig { fixed: Some(0.5), ..LambdaConfig::default() },
            ..EvalConfig::default()
        };
        let table = evaluate(&d, &Method::ALL, &cfg, None);
        assert!(table.failures.is_empty(), "{:?}", table.failures);
        for (j, m) in table.means().iter().enumerate() {
            let col: Vec<f64> = table.cells.iter().map(|r| r[j].unwrap()).collect();
            assert!((m.unwrap() - mean(&col)).abs() < 1e-9);
            assert!(col.iter().all(|a| (0.0..=100.0).contains(a)));
        }
        let csv = table.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "subject,csp,ssf,combine,ensemble,ccsp");
        assert_eq!(csv.lines().count(), 1 + 3 + 1);
        assert_eq!(evaluate(&d, &Method::ALL, &cfg, None).to_csv(), csv);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let d = small(2);
        let table = evaluate(&d, &[Method::Csp], &EvalConfig::default(), Some(0.05));
        assert_eq!(table.failures.len(), 3);
        assert!(table.all_failed());
        assert_eq!(table.means(), vec![None]);
    }

    #[test]
    fn separable_planted_data_is_perfect() {
        let d = synth_generate(&SynthConfig {
            n_subjects: 2,
            trials_per_class: 20,
            test_trials_per_class: 20,
            source_variance_profiles: vec![vec![8.0, 1.0], vec![1.0, 8.0]],
            subject_shift: SubjectShift { mixing_perturbation_scale: 0.0, scale_jitter: 0.0 },
            trial_variance_jitter: 0.0,
            noise_level: 0.0,
            ..SynthConfig::default()
        })
        .unwrap();
        let col = evaluate_method(Method::Csp, &d, &EvalConfig::default(), None);
        for c in col {
            assert_eq!(c.unwrap(), 100.0);
        }
    }

    #[test]
    fn tune_lambda_bookkeeping() {
        let d = small(3);
        let sources = sources_for(&d, 0);
        let target = &d.subjects[0].train;
        let cfg = TransferConfig::default();
        let one = tune_lambda(&sources, target, CvScheme::Kfold { k: 4 }, &[0.3], &cfg, 0).unwrap();
        assert_eq!(one.lambda, 0.3);
        let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let r = tune_lambda(&sources, target, CvScheme::Kfold { k: 10 }, &grid, &cfg, 0).unwrap();
        assert_eq!(r.errors.len(), 9);
        assert!(grid.contains(&r.lambda));
        let best = r.errors.iter().cloned().fold(f64::INFINITY, f64::min);
        let first = grid[r.errors.iter().position(|&e| e == best).unwrap()];
        assert_eq!(r.lambda, first);
        assert!(tune_lambda(&sources, target, CvScheme::Kfold { k: 4 }, &[], &cfg, 0).is_err());
        let loo = tune_lambda(&sources, target, CvScheme::Loocv, &[0.2, 0.8], &cfg, 0).unwrap();
        assert_eq!(loo.folds_used, target.n_trials());
    }

    #[test]
    fn curve_full_fraction_matches_evaluation() {
        let d = small(4);
        let cfg = EvalConfig::default();
        let curve = learning_curve(&d, &[Method::Csp, Method::Ssf], &[0.5, 1.0], &[cfg.seed], &cfg, Some(1)).unwrap();
        for s in &curve.series {
            let direct = evaluate_method(s.method, &d, &cfg, None);
            let m = mean(&direct.into_iter().map(Result::unwrap).collect::<Vec<_>>());
            assert_eq!(s.raw[1], Some(m));
            assert_eq!(s.smoothed, s.raw);
        }
        assert_eq!(curve.to_csv().lines().count(), 1 + 2 * 2);
        assert!(learning_curve(&d, &[Method::Csp], &[0.5, 0.3], &[0], &cfg, None).is_err());
    }

    #[test]
    fn mvr_bookkeeping_and_bounds() {
        let d = small(5);
        let mvr = MvrConfig { runs: 4, ..MvrConfig::default() };
        let r = mvr_experiment(&d, 0.5, &mvr, &EvalConfig::default()).unwrap();
        assert_eq!(r.runs.len() + r.failed_runs.len(), 4);
        assert!(r.runs.iter().all(|x| x.base >= 1.0 && x.transfer >= 1.0));
        assert_eq!(r.to_csv().lines().count(), 1 + r.runs.len());
        assert_eq!(mvr_experiment(&d, 0.5, &mvr, &EvalConfig::default()).unwrap(), r);
    }

    #[test]
    fn mvr_without_transfer_effect_is_not_significant() {
        // One subject: no sources, so the pooled filter is the target filter.
        let mut d = small(6);
        d.subjects.truncate(1);
        let mvr = MvrConfig { runs: 5, ..MvrConfig::default() };
        let r = mvr_experiment(&d, 0.5, &mvr, &EvalConfig::default()).unwrap();
        assert!(r.p_value >= 0.5, "{}", r.p_value);
        assert!(!r.significant);
    }

    #[test]
    fn chance_band_is_centered() {
        let (lo, hi) = chance_band(100, 2);
        assert!(lo < 50.0 && hi > 50.0);
        assert!(lo >= 38.0 && hi <= 62.0);
    }
}
