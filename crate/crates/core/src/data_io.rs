//! Dataset container format, loading/saving, training-set subsampling and the
//! synthetic multi-subject generator.
//!
//! On disk a dataset is a JSON manifest plus, per subject and partition, one
//! trial file and one label file:
//!
//! * trial file: little-endian `f64`, each trial row-major `channels × samples`,
//!   trials concatenated with no header;
//! * label file: one integer per line (UTF-8), same order as the trials.
//!
//! Relative paths in the manifest are resolved against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::csp::class_alphabet;
use crate::error::{Error, Result};
use crate::signal::{butterworth_bandpass, design_bandpass, BandpassSpec, CovEstimator, Trial};
use crate::transfer::SubjectData;
use crate::Label;

pub const DATASET_FORMAT: &str = "rtcsp-dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub train_file: PathBuf,
    pub test_file: PathBuf,
    pub train_labels: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub name: String,
    pub fs: f64,
    /// Channels stored per trial in the files.
    pub n_channels: usize,
    /// Samples stored per trial in the files.
    pub n_samples: usize,
    #[serde(default)]
    pub channel_names: Vec<String>,
    /// Rows kept after loading, in this order.
    #[serde(default)]
    pub channel_subset: Option<Vec<usize>>,
    #[serde(default)]
    pub covariance_estimator: CovEstimator,
    /// Applied to the full stored epoch before windowing.
    #[serde(default)]
    pub bandpass: Option<BandpassSpec>,
    /// Sample range `[start, end)` kept after filtering.
    #[serde(default)]
    pub window: Option<[usize; 2]>,
    /// Allowed labels; anything else in a label file is a format error.
    #[serde(default)]
    pub label_alphabet: Option<Vec<Label>>,
    pub subjects: Vec<SubjectEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format != DATASET_FORMAT {
            return Err(Error::Config(format!(
                "manifest format {:?}, expected {DATASET_FORMAT:?}",
                self.format
            )));
        }
        if !(self.fs > 0.0) || self.n_channels < 2 || self.n_samples == 0 {
            return Err(Error::Config(
                "fs must be positive, n_channels ≥ 2 and n_samples ≥ 1".into(),
            ));
        }
        if !self.channel_names.is_empty() && self.channel_names.len() != self.n_channels {
            return Err(Error::Config(format!(
                "{} channel names for {} channels",
                self.channel_names.len(),
                self.n_channels
            )));
        }
        if let Some(sub) = &self.channel_subset {
            if sub.len() < 2 || sub.iter().any(|&i| i >= self.n_channels) {
                return Err(Error::Config(format!(
                    "channel_subset must hold at least 2 indices below {}",
                    self.n_channels
                )));
            }
        }
        if let Some([a, b]) = self.window {
            if a >= b || b > self.n_samples {
                return Err(Error::Config(format!(
                    "window [{a}, {b}) outside {} samples",
                    self.n_samples
                )));
            }
        }
        if self.subjects.is_empty() {
            return Err(Error::Config("manifest lists no subjects".into()));
        }
        Ok(())
    }
}

/// Train and test partitions of one subject.
#[derive(Debug, Clone)]
pub struct SubjectSplit {
    pub train: SubjectData<f64>,
    pub test: SubjectData<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub fs: f64,
    pub subjects: Vec<SubjectSplit>,
}

impl Dataset {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.train.subject_id.clone()).collect()
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    m.validate()?;
    Ok(m)
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    load_with_manifest(&manifest, base)
}

pub fn load_with_manifest(manifest: &DatasetManifest, base: &Path) -> Result<Dataset> {
    manifest.validate()?;
    let filter = manifest
        .bandpass
        .map(|spec| design_bandpass(&spec, manifest.fs).map(|_| spec))
        .transpose()?;
    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let part = |data: &Path, labels: &Path| -> Result<SubjectData<f64>> {
            let labels_path = base.join(labels);
            let labels = read_labels(&labels_path, manifest.label_alphabet.as_deref())?;
            let raw = read_trials(&base.join(data), labels.len(), manifest.n_channels, manifest.n_samples)?;
            let trials = raw
                .into_iter()
                .map(|m| prepare_trial(m, manifest, filter.as_ref()))
                .collect::<Result<Vec<_>>>()?;
            SubjectData::new(entry.subject_id.clone(), trials, labels, manifest.covariance_estimator)
        };
        subjects.push(SubjectSplit {
            train: part(&entry.train_file, &entry.train_labels)?,
            test: part(&entry.test_file, &entry.test_labels)?,
        });
    }
    Ok(Dataset {
        name: manifest.name.clone(),
        fs: manifest.fs,
        subjects,
    })
}

fn prepare_trial(data: DMatrix<f64>, manifest: &DatasetManifest, bandpass: Option<&BandpassSpec>) -> Result<Trial<f64>> {
    let mut t = Trial::new(data, manifest.fs)?;
    if !manifest.channel_names.is_empty() {
        t = t.with_channel_names(manifest.channel_names.clone())?;
    }
    if let Some(sub) = &manifest.channel_subset {
        t = t.select_channels(sub)?;
    }
    if let Some(spec) = bandpass {
        t = butterworth_bandpass(&t, spec)?;
    }
    if let Some([a, b]) = manifest.window {
        t = t.crop(a, b)?;
    }
    Ok(t)
}

/// Reads exactly `n_trials` trials of `channels × samples`.
pub fn read_trials(path: &Path, n_trials: usize, channels: usize, samples: usize) -> Result<Vec<DMatrix<f64>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let trial_bytes = channels * samples * 8;
    let expected = n_trials * trial_bytes;
    if bytes.len() != expected {
        let (offset, message) = if bytes.len() < expected {
            let complete = bytes.len() / trial_bytes;
            (
                (complete * trial_bytes) as u64,
                format!(
                    "file holds {} bytes, {n_trials} trials of {channels}×{samples} need {expected}; trial {complete} is incomplete",
                    bytes.len()
                ),
            )
        } else {
            (
                expected as u64,
                format!("{} trailing bytes after {n_trials} trials", bytes.len() - expected),
            )
        };
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset,
            message,
        });
    }
    Ok(bytes
        .chunks_exact(trial_bytes)
        .map(|chunk| {
            let vals = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")));
            DMatrix::from_row_iterator(channels, samples, vals)
        })
        .collect())
}

pub fn write_trials(path: &Path, trials: &[Trial<f64>]) -> Result<()> {
    let mut buf = Vec::with_capacity(trials.iter().map(|t| t.data.len() * 8).sum());
    for t in trials {
        for r in 0..t.n_channels() {
            for v in t.data.row(r).iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path, alphabet: Option<&[Label]>) -> Result<Vec<Label>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let s = line.trim();
        if !s.is_empty() {
            let bad = |message: String| Error::Format {
                path: path.to_path_buf(),
                offset,
                message,
            };
            let v: Label = s.parse().map_err(|_| bad(format!("not an integer label: {s:?}")))?;
            if alphabet.is_some_and(|a| !a.contains(&v)) {
                return Err(bad(format!("label {v} not in the declared alphabet")));
            }
            labels.push(v);
        }
        offset += line.len() as u64;
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[Label]) -> Result<()> {
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes every subject's trials and labels into `dir` along with
/// `manifest.json`, and returns the manifest path.
///
/// Trials are stored as they are in memory, so the manifest declares no
/// bandpass, window or channel subset.
pub fn save_dataset(dataset: &Dataset, dir: &Path, estimator: CovEstimator) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = &dataset
        .subjects
        .first()
        .ok_or_else(|| Error::invalid("dataset has no subjects"))?
        .train
        .trials[0];
    let mut entries = Vec::new();
    for s in &dataset.subjects {
        for t in s.train.trials.iter().chain(&s.test.trials) {
            if t.n_channels() != first.n_channels() || t.n_samples() != first.n_samples() {
                return Err(Error::invalid("all trials must share one shape to be saved"));
            }
        }
        let id = &s.train.subject_id;
        let entry = SubjectEntry {
            subject_id: id.clone(),
            train_file: format!("{id}_train.f64").into(),
            test_file: format!("{id}_test.f64").into(),
            train_labels: format!("{id}_train.labels").into(),
            test_labels: format!("{id}_test.labels").into(),
        };
        write_trials(&dir.join(&entry.train_file), &s.train.trials)?;
        write_trials(&dir.join(&entry.test_file), &s.test.trials)?;
        write_labels(&dir.join(&entry.train_labels), &s.train.labels)?;
        write_labels(&dir.join(&entry.test_labels), &s.test.labels)?;
        entries.push(entry);
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        name: dataset.name.clone(),
        fs: dataset.fs,
        n_channels: first.n_channels(),
        n_samples: first.n_samples(),
        channel_names: first.channel_names.clone().unwrap_or_default(),
        channel_subset: None,
        covariance_estimator: estimator,
        bandpass: None,
        window: None,
        label_alphabet: None,
        subjects: entries,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Keeps `⌈p·N_c⌉` randomly chosen trials of every class, in original order.
pub fn subsample_training(subject: &SubjectData<f64>, fraction: f64, seed: u64) -> Result<SubjectData<f64>> {
    let idx = subsample_indices(&subject.labels, fraction, seed)?;
    subject.subset(&idx)
}

pub fn subsample_indices(labels: &[Label], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for class in class_alphabet(labels) {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let n = ceil_count(fraction, idx.len());
        if n < 2 {
            return Err(Error::degenerate(format!(
                "fraction {fraction} keeps {n} trial(s) of class {class}"
            )));
        }
        idx.shuffle(&mut rng);
        keep.extend_from_slice(&idx[..n]);
    }
    keep.sort_unstable();
    Ok(keep)
}

/// `⌈p·n⌉`, ignoring floating-point excess such as `0.1 * 30 = 3.0000000000000004`.
pub fn ceil_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    let c = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (c as usize).min(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubjectShift {
    /// Standard deviation of the entries of the per-subject perturbation added
    /// to the base mixing matrix (relative to its unit-scale columns).
    pub mixing_perturbation_scale: f64,
    /// Log-normal spread of the per-channel sensor gains.
    pub scale_jitter: f64,
}

impl Default for SubjectShift {
    fn default() -> Self {
        SubjectShift {
            mixing_perturbation_scale: 0.3,
            scale_jitter: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub name: String,
    pub n_subjects: usize,
    pub n_classes: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    pub fs: f64,
    pub trials_per_class: usize,
    pub test_trials_per_class: usize,
    /// `[class][latent source]` variances. Sources past the end of a row have
    /// variance 1; there are always `n_channels` latent sources.
    pub source_variance_profiles: Vec<Vec<f64>>,
    pub subject_shift: SubjectShift,
    /// Log-normal spread of each source's variance from trial to trial.
    pub trial_variance_jitter: f64,
    /// Standard deviation of white sensor noise.
    pub noise_level: f64,
    /// Band of the latent sources; `None` leaves them white.
    pub source_band: Option<BandpassSpec>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            name: "synthetic".into(),
            n_subjects: 6,
            n_classes: 2,
            n_channels: 8,
            n_samples: 256,
            fs: 128.0,
            trials_per_class: 40,
            test_trials_per_class: 40,
            source_variance_profiles: vec![vec![2.0, 1.0], vec![1.0, 2.0]],
            subject_shift: SubjectShift::default(),
            trial_variance_jitter: 0.3,
            noise_level: 0.1,
            source_band: Some(BandpassSpec {
                low_hz: 8.0,
                high_hz: 30.0,
                order: 4,
                zero_phase: true,
            }),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.n_subjects,
            self.n_classes,
            self.n_channels,
            self.n_samples,
            self.trials_per_class,
            self.test_trials_per_class,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("all counts must be positive".into()));
        }
        if self.n_classes < 2 || self.n_channels < 2 {
            return Err(Error::Config("need at least 2 classes and 2 channels".into()));
        }
        if !(self.fs > 0.0) {
            return Err(Error::Config("fs must be positive".into()));
        }
        if self.source_variance_profiles.len() != self.n_classes {
            return Err(Error::Config(format!(
                "{} variance profiles for {} classes",
                self.source_variance_profiles.len(),
                self.n_classes
            )));
        }
        let bad_profile = self
            .source_variance_profiles
            .iter()
            .any(|p| p.len() > self.n_channels || p.iter().any(|v| !(*v > 0.0)));
        if bad_profile {
            return Err(Error::Config(
                "variance profiles need positive entries and at most n_channels sources".into(),
            ));
        }
        let nonneg = [
            self.noise_level,
            self.trial_variance_jitter,
            self.subject_shift.mixing_perturbation_scale,
            self.subject_shift.scale_jitter,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("noise and jitter levels must be non-negative".into()));
        }
        if let Some(band) = &self.source_band {
            design_bandpass(band, self.fs)?;
        }
        Ok(())
    }
}

/// Square linear mixing of independent latent sources:
/// `x = diag(g_s) (A₀ + Δ_s) s + noise`.
///
/// `A₀` is shared; `Δ_s` and the sensor gains `g_s` are drawn per subject.
/// Labels are `1..=n_classes`; trial order within each partition is shuffled.
pub fn synth_generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let c = config.n_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let band = config
        .source_band
        .map(|b| design_bandpass(&b, config.fs))
        .transpose()?;

    let q = gaussian(&mut rng, c, c).qr().q();
    let base = DMatrix::from_fn(c, c, |i, j| q[(i, j)] * (0.5 * (j as f64 / c as f64) - 0.25).exp());

    let mut subjects = Vec::with_capacity(config.n_subjects);
    for s in 0..config.n_subjects {
        let delta = gaussian(&mut rng, c, c) * (config.subject_shift.mixing_perturbation_scale / (c as f64).sqrt());
        let gains: Vec<f64> = (0..c)
            .map(|_| (config.subject_shift.scale_jitter * normal(&mut rng)).exp())
            .collect();
        let mut mixing = &base + delta;
        for (i, g) in gains.iter().enumerate() {
            mixing.row_mut(i).scale_mut(*g);
        }
        let id = format!("S{:02}", s + 1);
        let mut partition = |per_class: usize| -> Result<SubjectData<f64>> {
            let mut order: Vec<Label> = (1..=config.n_classes as Label)
                .flat_map(|k| std::iter::repeat_n(k, per_class))
                .collect();
            order.shuffle(&mut rng);
            let trials = order
                .iter()
                .map(|&label| synth_trial(&mut rng, config, &mixing, band.as_ref(), label))
                .collect::<Result<Vec<_>>>()?;
            SubjectData::new(id.clone(), trials, order, CovEstimator::Plain)
        };
        let train = partition(config.trials_per_class)?;
        let test = partition(config.test_trials_per_class)?;
        subjects.push(SubjectSplit { train, test });
    }
    Ok(Dataset {
        name: config.name.clone(),
        fs: config.fs,
        subjects,
    })
}

fn synth_trial(
    rng: &mut ChaCha8Rng,
    config: &SynthConfig,
    mixing: &DMatrix<f64>,
    band: Option<&crate::signal::BandpassFilter>,
    label: Label,
) -> Result<Trial<f64>> {
    let c = config.n_channels;
    let t = config.n_samples;
    let profile = &config.source_variance_profiles[(label - 1) as usize];
    let mut sources = DMatrix::zeros(c, t);
    for j in 0..c {
        let var = profile.get(j).copied().unwrap_or(1.0) * (config.trial_variance_jitter * normal(rng)).exp();
        let white: Vec<f64> = (0..t).map(|_| normal(rng)).collect();
        let mut x = match band {
            Some(f) => f.apply(&white),
            None => white,
        };
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / t as f64).sqrt();
        let k = if rms > 0.0 { var.sqrt() / rms } else { 0.0 };
        x.iter_mut().for_each(|v| *v *= k);
        sources.row_mut(j).copy_from_slice(&x);
    }
    let noise = gaussian(rng, c, t) * config.noise_level;
    Trial::new(mixing * sources + noise, config.fs)
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = normal(rng);
        }
    }
    m
}
