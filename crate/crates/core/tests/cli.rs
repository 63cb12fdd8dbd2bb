use std::fs;
use std::path::Path;

use rtcsp::cli::run;

fn run_in(args: &[&str]) -> i32 {
    let mut full = vec!["rtcsp"];
    full.extend_from_slice(args);
    run(full)
}

fn write(path: &Path, text: &str) -> String {
    fs::write(path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL_SYNTH: &str = r#"{"n_subjects": 3, "trials_per_class": 20, "test_trials_per_class": 10, "n_samples": 160, "seed": 5}"#;

#[test]
fn synth_writes_every_trial_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("synth.json"),
        r#"{"n_subjects": 5, "n_classes": 2, "trials_per_class": 50, "test_trials_per_class": 5, "n_samples": 64, "seed": 9}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run_in(&["synth", &cfg, "--out", a.to_str().unwrap()]), 0);
    assert_eq!(run_in(&["synth", &cfg, "--out", b.to_str().unwrap()]), 0);

    let manifest = rtcsp::data_io::read_manifest(&a.join("manifest.json")).unwrap();
    assert_eq!(manifest.subjects.len(), 5);
    let mut train_trials = 0;
    for s in &manifest.subjects {
        for f in [&s.train_file, &s.test_file, &s.train_labels, &s.test_labels] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        }
        train_trials += fs::read_to_string(a.join(&s.train_labels)).unwrap().lines().count();
    }
    assert_eq!(train_trials, 500);

    let c = dir.path().join("c");
    assert_eq!(run_in(&["synth", &cfg, "--out", c.to_str().unwrap(), "--seed-override", "10"]), 0);
    let f = &manifest.subjects[0].train_file;
    assert_ne!(fs::read(a.join(f)).unwrap(), fs::read(c.join(f)).unwrap());
}

#[test]
fn evaluate_on_a_manifest_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let synth = write(&dir.path().join("synth.json"), SMALL_SYNTH);
    let data = dir.path().join("data");
    assert_eq!(run_in(&["synth", &synth, "--out", data.to_str().unwrap()]), 0);
    let cfg = write(
        &dir.path().join("eval.json"),
        r#"{"dataset": {"manifest": "data/manifest.json"}, "lambda": {"fixed": 0.4}}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(run_in(&["evaluate", &cfg, "--out", out.to_str().unwrap()]), 0);
    let csv = fs::read_to_string(out.join("accuracy.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "subject,csp,ssf,combine,ensemble,ccsp");
    assert_eq!(lines.len(), 1 + 3 + 1);
    assert!(lines[4].starts_with("mean,"));
    assert!(out.join("accuracy.svg").exists());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("accuracy.json")).unwrap()).unwrap();
    assert_eq!(json["table"]["subjects"].as_array().unwrap().len(), 3);
}

#[test]
fn curve_rows_and_no_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("curve.json"),
        &format!(r#"{{"dataset": {{"synth": {SMALL_SYNTH}}}, "methods": ["csp", "ssf"]}}"#),
    );
    let with = dir.path().join("with");
    let without = dir.path().join("without");
    assert_eq!(run_in(&["curve", &cfg, "--out", with.to_str().unwrap()]), 0);
    assert_eq!(run_in(&["curve", &cfg, "--out", without.to_str().unwrap(), "--no-plot"]), 0);
    let csv = fs::read_to_string(with.join("curve.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("csp,")).count(), 19);
    assert_eq!(csv.lines().filter(|l| l.starts_with("ssf,")).count(), 19);
    assert!(with.join("curve.svg").exists());
    assert!(!without.join("curve.svg").exists());
    assert_eq!(csv, fs::read_to_string(without.join("curve.csv")).unwrap());
}

#[test]
fn mvr_has_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("mvr.json"),
        &format!(r#"{{"dataset": {{"synth": {SMALL_SYNTH}}}, "fractions": [0.5], "runs": 50}}"#),
    );
    let out = dir.path().join("out");
    assert_eq!(run_in(&["mvr", &cfg, "--out", out.to_str().unwrap(), "--no-plot"]), 0);
    let csv = fs::read_to_string(out.join("mvr.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 50);
    let summary = fs::read_to_string(out.join("mvr_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn tune_and_align_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("tune.json"),
        &format!(
            r#"{{"dataset": {{"synth": {SMALL_SYNTH}}}, "tune_targets": ["S01"], "align_pair": {{"source": "S02", "target": "S01"}},
                "lambda": {{"scheme": {{"kfold": {{"k": 5}}}}}}}}"#
        ),
    );
    let out = dir.path().join("out");
    assert_eq!(run_in(&["tune", &cfg, "--out", out.to_str().unwrap()]), 0);
    let csv = fs::read_to_string(out.join("lambda.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 2 + 9);

    assert_eq!(run_in(&["align-inspect", &cfg, "--out", out.to_str().unwrap()]), 0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("alignment.json")).unwrap()).unwrap();
    assert_eq!(json["maps"].as_array().unwrap().len(), 2);
    assert_eq!(json["source"], "S02");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(&dir.path().join("bad.json"), r#"{"methods": ["csp"], "windo": 3}"#);
    assert_eq!(run_in(&["evaluate", &unknown]), 2);
    let bad_value = write(&dir.path().join("bad2.json"), r#"{"fractions": [0.0, 0.5]}"#);
    assert_eq!(run_in(&["curve", &bad_value]), 2);
    let bad_synth = write(&dir.path().join("bad3.json"), r#"{"n_subjects": 0}"#);
    assert_eq!(run_in(&["synth", &bad_synth, "--out", dir.path().join("x").to_str().unwrap()]), 2);
    assert_eq!(run_in(&["evaluate", dir.path().join("missing.json").to_str().unwrap()]), 4);
}

#[test]
fn total_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("eval.json"),
        &format!(r#"{{"dataset": {{"synth": {SMALL_SYNTH}}}, "methods": ["csp"], "train_fraction": 0.05}}"#),
    );
    assert_eq!(run_in(&["evaluate", &cfg, "--out", dir.path().join("o").to_str().unwrap()]), 3);
}
