use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qfusion::cli::ReportDoc;

const SMALL: &str = r#"
[synth]
seed = 7
genuine_per_mixture = 150
impostor_per_mixture = 450
"#;

fn qfusion(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfusion"))
        .arg("--config")
        .arg(dir.join("run.toml"))
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    dir
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn report(dir: &Path, rule: &str) -> ReportDoc {
    toml::from_str(
        &fs::read_to_string(dir.join("out").join(format!("report-{rule}.toml"))).unwrap(),
    )
    .unwrap()
}

#[test]
fn full_run_writes_consistent_reports() {
    let dir = setup();
    let d = dir.path();
    for cmd in ["gen", "train", "infer-device", "sweep"] {
        ok(&qfusion(d, &[cmd]));
    }
    for rule in ["llr-sum", "mean"] {
        ok(&qfusion(d, &["--rule", rule, "fuse"]));
        ok(&qfusion(d, &["--rule", rule, "eval"]));
    }
    for file in [
        "train.csv",
        "eval.csv",
        "models.toml",
        "device_estimation.csv",
        "sweep.csv",
        "feature_subsets.csv",
        "fused-llr-sum.csv",
        "curve-llr-sum.csv",
        "det-llr-sum.csv",
        "manifest-eval.toml",
    ] {
        assert!(d.join("out").join(file).is_file(), "missing {file}");
    }

    let llr = report(d, "llr-sum");
    let mean = report(d, "mean");
    assert_eq!(llr.genuine + llr.impostor, llr.accesses);
    assert_eq!(
        llr.mixture.iter().map(|m| m.accesses).sum::<usize>(),
        llr.accesses
    );
    assert_eq!(
        llr.mixture.iter().map(|m| m.genuine).sum::<usize>(),
        llr.genuine
    );
    assert!(llr.gate);
    assert!(
        llr.eer <= mean.eer,
        "llr-sum {} vs mean {}",
        llr.eer,
        mean.eer
    );
    assert!(llr.eer > 0.0 && llr.eer < 0.2);
}

#[test]
fn fused_file_has_one_row_per_access() {
    let dir = setup();
    let d = dir.path();
    for cmd in ["gen", "train", "fuse"] {
        ok(&qfusion(d, &["--gate", "off", cmd]));
    }
    let fused = fs::read_to_string(d.join("out/fused-llr-sum.csv")).unwrap();
    let eval = fs::read_to_string(d.join("out/eval.csv")).unwrap();
    // Only second-session accesses are scored.
    let mut ids: Vec<&str> = eval
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|f| f[1] == "2")
        .map(|f| f[0])
        .collect();
    ids.dedup();
    assert_eq!(fused.lines().count() - 1, ids.len());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = setup();
    let out = qfusion(dir.path(), &["--no-such-flag", "gen"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn fuse_without_models_fails() {
    let dir = setup();
    ok(&qfusion(dir.path(), &["gen"]));
    let out = qfusion(dir.path(), &["fuse"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("qfusion: error:"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = setup();
    fs::write(dir.path().join("run.toml"), "[synth]\nseeds = 3\n").unwrap();
    let out = qfusion(dir.path(), &["gen"]);
    assert!(!out.status.success());
}
