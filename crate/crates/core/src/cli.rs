//! Command-line front end. Every command reads one JSON config; flags only
//! control output location, plotting, parallelism and the seed.
//!
//! Exit codes: 0 success, 2 configuration error, 3 experiment failure, 4 I/O error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::alignment::{align_subject, AlignOptions, AlignmentMapDoc};
use crate::classify::LdaOptions;
use crate::data_io::{load_dataset, save_dataset, synth_generate, Dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, learning_curve, mvr_experiment, sources_for, tune_lambda, EvalConfig, LambdaConfig, Method,
    MvrConfig, MvrReport,
};
use crate::plot;
use crate::signal::CovEstimator;
use crate::transfer::TransferConfig;

#[derive(Debug, Parser)]
#[command(name = "rtcsp", version, about = "Riemannian transfer CSP experiments")]
pub struct Cli {
    /// Output directory (overrides the config's `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Skip SVG plots.
    #[arg(long, global = true)]
    pub no_plot: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Replaces the experiment seeds (and the synthetic dataset seed) with this one.
    #[arg(long, global = true)]
    pub seed_override: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a synthesis config.
    Synth { config: PathBuf },
    /// Accuracy table: every subject as target, all others as sources.
    Evaluate { config: PathBuf },
    /// Cross-validated λ for composite CSP, per target subject.
    Tune { config: PathBuf },
    /// Accuracy against the fraction of target training data.
    Curve { config: PathBuf },
    /// Mean-variance-ratio study of target-only vs pooled filters.
    Mvr { config: PathBuf },
    /// Dump the per-class alignment maps of one source/target pair.
    AlignInspect { config: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Manifest(PathBuf),
    Synth(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignPair {
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub methods: Vec<Method>,
    pub n_pairs: usize,
    pub align: AlignOptions,
    pub lda: LdaOptions,
    pub pooled_lda: bool,
    pub lambda: LambdaConfig,
    /// Fraction of each target's training data used by `evaluate` (all if absent).
    pub train_fraction: Option<f64>,
    /// Fractions for `curve` and `mvr`.
    pub fractions: Vec<f64>,
    /// `curve` averages over all seeds; other commands use the first.
    pub seeds: Vec<u64>,
    pub runs: usize,
    pub mvr_n_pairs: usize,
    pub alpha: f64,
    pub smoothing_window: Option<usize>,
    /// `tune` only: restrict to these target subjects.
    pub tune_targets: Option<Vec<String>>,
    pub align_pair: Option<AlignPair>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Synth(SynthConfig::default()),
            methods: Method::ALL.to_vec(),
            n_pairs: 3,
            align: AlignOptions::default(),
            lda: LdaOptions::default(),
            pooled_lda: false,
            lambda: LambdaConfig::default(),
            train_fraction: None,
            fractions: (0..19).map(|i| (10 + 5 * i) as f64 / 100.0).collect(),
            seeds: vec![0],
            runs: 50,
            mvr_n_pairs: 1,
            alpha: 0.05 / 9.0,
            smoothing_window: None,
            tune_targets: None,
            align_pair: None,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        if self.n_pairs == 0 || self.mvr_n_pairs == 0 {
            return bad("n_pairs and mvr_n_pairs must be positive");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.runs == 0 {
            return bad("runs must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.fractions.is_empty()
            || self.fractions.iter().any(|p| !(*p > 0.0 && *p <= 1.0))
            || self.fractions.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("fractions must be ascending within (0, 1]");
        }
        if let Some(p) = self.train_fraction {
            if !(p > 0.0 && p <= 1.0) {
                return bad("train_fraction must lie in (0, 1]");
            }
        }
        if self.lambda.grid.is_empty() || self.lambda.grid.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return bad("lambda grid must be non-empty within [0, 1]");
        }
        if let Some(l) = self.lambda.fixed {
            if !(0.0..=1.0).contains(&l) {
                return bad("fixed lambda must lie in [0, 1]");
            }
        }
        if let DatasetSource::Synth(s) = &self.dataset {
            s.validate()?;
        }
        Ok(())
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            transfer: TransferConfig {
                n_pairs: self.n_pairs,
                align: self.align,
                lda: self.lda,
                pooled_lda: self.pooled_lda,
            },
            lambda: self.lambda.clone(),
            seed: self.seeds[0],
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 4,
        _ => 3,
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<i32> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<i32> {
    if let Command::Synth { config } = &cli.command {
        return cmd_synth(config, cli);
    }
    let (config_path, run): (&PathBuf, fn(&Cli, &ExperimentConfig, &Dataset, &Path) -> Result<i32>) = match &cli.command {
        Command::Evaluate { config } => (config, cmd_evaluate),
        Command::Tune { config } => (config, cmd_tune),
        Command::Curve { config } => (config, cmd_curve),
        Command::Mvr { config } => (config, cmd_mvr),
        Command::AlignInspect { config } => (config, cmd_align_inspect),
        Command::Synth { .. } => unreachable!(),
    };
    let mut cfg: ExperimentConfig = read_json(config_path)?;
    if let Some(seed) = cli.seed_override {
        cfg.seeds = vec![seed];
        if let DatasetSource::Synth(s) = &mut cfg.dataset {
            s.seed = seed;
        }
    }
    cfg.validate()?;
    let dataset = match &cfg.dataset {
        DatasetSource::Manifest(p) => {
            let p = if p.is_relative() {
                config_path.parent().unwrap_or(Path::new(".")).join(p)
            } else {
                p.clone()
            };
            load_dataset(&p)?
        }
        DatasetSource::Synth(s) => synth_generate(s)?,
    };
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    run(cli, &cfg, &dataset, &out)
}

fn cmd_synth(config_path: &Path, cli: &Cli) -> Result<i32> {
    let mut cfg: SynthConfig = read_json(config_path)?;
    if let Some(seed) = cli.seed_override {
        cfg.seed = seed;
    }
    let dataset = synth_generate(&cfg).map_err(|e| match e {
        Error::InvalidInput(m) => Error::Config(m),
        other => other,
    })?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}_data", cfg.name)));
    let manifest = save_dataset(&dataset, &out, CovEstimator::Plain)?;
    let train: usize = dataset.subjects.iter().map(|s| s.train.n_trials()).sum();
    let test: usize = dataset.subjects.iter().map(|s| s.test.n_trials()).sum();
    println!(
        "{} subjects, {train} training trials, {test} test trials -> {}",
        dataset.n_subjects(),
        manifest.display()
    );
    Ok(0)
}

#[derive(Serialize)]
struct EvaluateSummary<'a> {
    table: &'a crate::eval::AccuracyTable,
    means: Vec<Option<f64>>,
    config: &'a ExperimentConfig,
}

fn cmd_evaluate(cli: &Cli, cfg: &ExperimentConfig, dataset: &Dataset, out: &Path) -> Result<i32> {
    let table = evaluate(dataset, &cfg.methods, &cfg.eval_config(), cfg.train_fraction);
    write(&out.join("accuracy.csv"), &table.to_csv())?;
    let means = table.means();
    write_json(
        &out.join("accuracy.json"),
        &EvaluateSummary {
            table: &table,
            means: means.clone(),
            config: cfg,
        },
    )?;
    if !cli.no_plot {
        let series: Vec<(&str, Vec<Option<f64>>)> = cfg
            .methods
            .iter()
            .enumerate()
            .map(|(j, m)| (m.name(), table.cells.iter().map(|r| r[j]).collect()))
            .collect();
        write(
            &out.join("accuracy.svg"),
            &plot::bar_chart(&format!("{}: test accuracy", dataset.name), "accuracy (%)", &table.subjects, &series),
        )?;
    }
    for (m, v) in cfg.methods.iter().zip(&means) {
        match v {
            Some(v) => println!("{:<9} {v:6.2}", m.name()),
            None => println!("{:<9} failed", m.name()),
        }
    }
    if !table.failures.is_empty() {
        println!("{} cell(s) failed; see accuracy.json", table.failures.len());
    }
    Ok(if table.all_failed() { 3 } else { 0 })
}

#[derive(Serialize)]
struct TuneRow {
    subject: String,
    lambda: Option<f64>,
    errors: Vec<f64>,
    error: Option<String>,
}

fn cmd_tune(_cli: &Cli, cfg: &ExperimentConfig, dataset: &Dataset, out: &Path) -> Result<i32> {
    let ecfg = cfg.eval_config();
    let ids = dataset.subject_ids();
    if let Some(t) = &cfg.tune_targets {
        if let Some(missing) = t.iter().find(|id| !ids.contains(id)) {
            return Err(Error::Config(format!("unknown tune target {missing}")));
        }
    }
    let mut rows = Vec::new();
    for (k, id) in ids.iter().enumerate() {
        if cfg.tune_targets.as_ref().is_some_and(|t| !t.contains(id)) {
            continue;
        }
        let r = tune_lambda(
            &sources_for(dataset, k),
            &dataset.subjects[k].train,
            cfg.lambda.scheme,
            &cfg.lambda.grid,
            &ecfg.transfer,
            crate::eval::derive_seed(ecfg.seed, &[k as u64, 1]),
        );
        rows.push(match r {
            Ok(r) => TuneRow {
                subject: id.clone(),
                lambda: Some(r.lambda),
                errors: r.errors,
                error: None,
            },
            Err(e) => TuneRow {
                subject: id.clone(),
                lambda: None,
                errors: vec![],
                error: Some(e.to_string()),
            },
        });
    }
    let mut csv = String::from("subject,lambda");
    for l in &cfg.lambda.grid {
        csv.push_str(&format!(",error_{l}"));
    }
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.subject);
        csv.push(',');
        csv.push_str(&r.lambda.map(|l| l.to_string()).unwrap_or_default());
        for i in 0..cfg.lambda.grid.len() {
            csv.push(',');
            if let Some(e) = r.errors.get(i) {
                csv.push_str(&format!("{e:.6}"));
            }
        }
        csv.push('\n');
        match r.lambda {
            Some(l) => println!("{:<8} lambda = {l}", r.subject),
            None => println!("{:<8} failed", r.subject),
        }
    }
    write(&out.join("lambda.csv"), &csv)?;
    write_json(&out.join("lambda.json"), &rows)?;
    Ok(if rows.iter().all(|r| r.lambda.is_none()) { 3 } else { 0 })
}

fn cmd_curve(cli: &Cli, cfg: &ExperimentConfig, dataset: &Dataset, out: &Path) -> Result<i32> {
    let curve = learning_curve(
        dataset,
        &cfg.methods,
        &cfg.fractions,
        &cfg.seeds,
        &cfg.eval_config(),
        cfg.smoothing_window,
    )?;
    write(&out.join("curve.csv"), &curve.to_csv())?;
    write_json(&out.join("curve.json"), &curve)?;
    if !cli.no_plot {
        let pct: Vec<f64> = curve.fractions.iter().map(|p| 100.0 * p).collect();
        let series: Vec<(&str, Vec<Option<f64>>)> =
            curve.series.iter().map(|s| (s.method.name(), s.smoothed.clone())).collect();
        write(
            &out.join("curve.svg"),
            &plot::line_chart(
                &format!("{}: accuracy vs training data", dataset.name),
                "training data used (%)",
                "accuracy (%)",
                &pct,
                &series,
            ),
        )?;
    }
    println!("{} fractions x {} methods", curve.fractions.len(), curve.series.len());
    let any = curve.series.iter().any(|s| s.raw.iter().any(Option::is_some));
    Ok(if any { 0 } else { 3 })
}

fn cmd_mvr(cli: &Cli, cfg: &ExperimentConfig, dataset: &Dataset, out: &Path) -> Result<i32> {
    let mvr = MvrConfig {
        runs: cfg.runs,
        alpha: cfg.alpha,
        n_pairs: cfg.mvr_n_pairs,
    };
    let ecfg = cfg.eval_config();
    let mut reports: Vec<MvrReport> = Vec::new();
    let mut failures = Vec::new();
    for &p in &cfg.fractions {
        match mvr_experiment(dataset, p, &mvr, &ecfg) {
            Ok(r) => {
                println!(
                    "p = {p}: base {:.4} transfer {:.4} p-value {:.3e}{}",
                    r.mean_base,
                    r.mean_transfer,
                    r.p_value,
                    if r.significant { " *" } else { "" }
                );
                reports.push(r);
            }
            Err(e) => {
                log::warn!("fraction {p}: {e}");
                failures.push((p, e.to_string()));
            }
        }
    }
    let mut csv = String::from("fraction,run,mvr_base,mvr_transfer\n");
    let mut summary = String::from("fraction,runs,failed_runs,mean_base,se_base,mean_transfer,se_transfer,t,p_value,sign_test_p_value,alpha,significant\n");
    for r in &reports {
        csv.push_str(r.to_csv().split_once('\n').map_or("", |x| x.1));
        summary.push_str(&format!(
            "{},{},{},{:.10},{:.10},{:.10},{:.10},{:.6},{:.6e},{:.6e},{:.6e},{}\n",
            r.fraction,
            r.runs.len(),
            r.failed_runs.len(),
            r.mean_base,
            r.se_base,
            r.mean_transfer,
            r.se_transfer,
            r.t_statistic,
            r.p_value,
            r.sign_test_p_value,
            r.alpha,
            r.significant
        ));
    }
    write(&out.join("mvr.csv"), &csv)?;
    write(&out.join("mvr_summary.csv"), &summary)?;
    write_json(&out.join("mvr.json"), &serde_json::json!({ "reports": reports, "failed_fractions": failures }))?;
    if !cli.no_plot && !reports.is_empty() {
        let x: Vec<f64> = reports.iter().map(|r| 100.0 * r.fraction).collect();
        let series = vec![
            ("target only", reports.iter().map(|r| Some(r.mean_base)).collect()),
            ("pooled", reports.iter().map(|r| Some(r.mean_transfer)).collect()),
        ];
        write(
            &out.join("mvr.svg"),
            &plot::line_chart(
                &format!("{}: mean-variance ratio", dataset.name),
                "training data used (%)",
                "MVR",
                &x,
                &series,
            ),
        )?;
    }
    Ok(if reports.is_empty() { 3 } else { 0 })
}

#[derive(Serialize)]
struct AlignDump {
    source: String,
    target: String,
    maps: Vec<AlignmentMapDoc>,
}

fn cmd_align_inspect(_cli: &Cli, cfg: &ExperimentConfig, dataset: &Dataset, out: &Path) -> Result<i32> {
    let ids = dataset.subject_ids();
    let find = |id: &str| {
        ids.iter()
            .position(|x| x == id)
            .ok_or_else(|| Error::Config(format!("unknown subject {id}")))
    };
    let (s, t) = match &cfg.align_pair {
        Some(p) => (find(&p.source)?, find(&p.target)?),
        None if ids.len() >= 2 => (1, 0),
        None => return Err(Error::Config("align-inspect needs two subjects".into())),
    };
    let src = &dataset.subjects[s].train;
    let tgt = &dataset.subjects[t].train;
    let (_, maps) = align_subject(&src.covariances, &src.labels, &tgt.covariances, &tgt.labels, &cfg.align)?;
    let dump = AlignDump {
        source: ids[s].clone(),
        target: ids[t].clone(),
        maps: maps.iter().map(|m| m.to_doc()).collect(),
    };
    write_json(&out.join("alignment.json"), &dump)?;
    println!("{} class map(s): {} -> {}", maps.len(), dump.source, dump.target);
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_fractions_are_ten_to_hundred_percent() {
        let c = ExperimentConfig::default();
        assert_eq!(c.fractions.len(), 19);
        assert_eq!(c.fractions[0], 0.1);
        assert_eq!(*c.fractions.last().unwrap(), 1.0);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"methodz": ["csp"]}"#).unwrap_err();
        assert!(err.to_string().contains("methodz"));
        let ok: ExperimentConfig =
            serde_json::from_str(r#"{"methods": ["csp", "ccsp"], "dataset": {"manifest": "m.json"}}"#).unwrap();
        assert_eq!(ok.methods, vec![Method::Csp, Method::Ccsp]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::io("p", std::io::Error::other("x"))), 4);
        assert_eq!(exit_code(&Error::invalid("x")), 3);
        assert_eq!(run(["rtcsp", "evaluate", "/nonexistent/config.json"]), 4);
        assert_eq!(run(["rtcsp", "frobnicate"]), 2);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let c = ExperimentConfig {
            fractions: vec![0.5, 0.2],
            ..ExperimentConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ExperimentConfig {
            methods: vec![],
            ..ExperimentConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
