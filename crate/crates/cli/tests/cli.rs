use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn njode(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_njode")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = njode(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn generate_ou(dir: &Path, n: &str) {
    ok(
        &["generate", "--model", "ou", "--n", n, "--grid", "100", "--t", "1.0", "--obs-prob", "0.1", "--seed", "7", "--out", "d"],
        dir,
    );
}

#[test]
fn generate_writes_a_reloadable_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    generate_ou(tmp.path(), "100");
    let ds = njode::sde::read_dataset(&tmp.path().join("d")).unwrap();
    assert_eq!(ds.len(), 100);
    assert_eq!(ds.grid.steps, 100);
}

#[test]
fn two_dimensional_heston_has_two_coordinates() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["generate", "--model", "heston_nofeller", "--dim", "2", "--n", "3", "--grid", "10", "--out", "h"], tmp.path());
    let values = fs::read_to_string(tmp.path().join("h/values.csv")).unwrap();
    assert_eq!(values.lines().count(), 1 + 3 * 11 * 2);
    assert!(values.lines().skip(1).any(|l| l.split(',').nth(2) == Some("1")));
}

#[test]
fn invalid_flags_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = njode(&["generate", "--model", "ou", "--obs-prob", "1.5", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = njode(&["train", "--out", "r"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = njode(&["generate", "--model", "ou", "--bogus", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = njode(&["train", "--data", "nowhere", "--out", "r"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn zero_epochs_checkpoints_the_initialized_model() {
    let tmp = tempfile::tempdir().unwrap();
    generate_ou(tmp.path(), "50");
    ok(&["train", "--data", "d", "--epochs", "0", "--batch", "10", "--hidden", "6", "--seed", "4", "--out", "r"], tmp.path());
    let (model, meta) = njode::run::load_checkpoint(&tmp.path().join("r")).unwrap();
    assert_eq!(model, njode::njode::NjodeModel::new(meta.config, 4).unwrap());
    let curves = fs::read_to_string(tmp.path().join("r/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1);
    let config: njode::run::RunConfig = njode::run::read_config(&tmp.path().join("r")).unwrap();
    assert_eq!(config.train.lr, 0.001);
    assert_eq!(config.train.weight_decay, 0.0005);
    assert!(config.conventions.contains_key("weight_decay"));
}

#[test]
fn eval_reproduces_the_final_curve_row_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    generate_ou(tmp.path(), "60");
    ok(&["train", "--data", "d", "--epochs", "2", "--batch", "16", "--hidden", "8", "--out", "r"], tmp.path());
    let first = ok(&["eval", "--run", "r", "--data", "d", "--metric"], tmp.path());
    let p1 = fs::read(tmp.path().join("r/predictions.csv")).unwrap();
    let second = ok(&["eval", "--run", "r", "--data", "d", "--metric"], tmp.path());
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(p1, fs::read(tmp.path().join("r/predictions.csv")).unwrap());

    let report: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    let last = njode::run::read_curves(&tmp.path().join("r/curves.csv")).unwrap().pop().unwrap();
    assert_eq!(report["test_loss"].as_f64().unwrap(), last.test_loss);
    assert_eq!(report["oracle_loss"].as_f64(), last.oracle_loss);
    assert_eq!(report["relative_difference"].as_f64(), last.relative_difference);
    assert_eq!(report["eval_metric"].as_f64(), last.eval_metric);
}

#[test]
fn metric_without_oracle_is_explained() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        &["generate", "--model", "heston", "--dim", "2", "--n", "20", "--grid", "20", "--obs-prob", "0.3", "--mask-mode", "bernoulli:0.5", "--out", "h"],
        tmp.path(),
    );
    ok(&["train", "--data", "h", "--epochs", "1", "--batch", "8", "--hidden", "6", "--mode", "masked", "--out", "r"], tmp.path());
    let out = njode(&["eval", "--run", "r", "--data", "h", "--metric"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("conditional expectation"));
    ok(&["eval", "--run", "r", "--data", "h"], tmp.path());
}

#[test]
fn study_grid_arithmetic_and_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    generate_ou(tmp.path(), "60");
    let args = ["study", "--data", "d", "--n1", "10,20", "--m", "4,6", "--repeats", "2", "--test-size", "20", "--epochs", "1", "--batch", "10", "--latent", "3"];
    let mut a: Vec<&str> = args.to_vec();
    a.extend(["--out", "s1"]);
    ok(&a, tmp.path());
    let mut b: Vec<&str> = args.to_vec();
    b.extend(["--out", "s2", "--workers", "1"]);
    ok(&b, tmp.path());
    let t1 = fs::read_to_string(tmp.path().join("s1/study.csv")).unwrap();
    assert_eq!(t1.lines().count(), 1 + 8);
    assert_eq!(t1, fs::read_to_string(tmp.path().join("s2/study.csv")).unwrap());

    ok(&["export", "--study", "s1/study.csv", "--out", "summary.csv"], tmp.path());
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);
}

#[test]
fn oversized_study_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    generate_ou(tmp.path(), "30");
    let out = njode(&["study", "--data", "d", "--n1", "20000", "--m", "4", "--test-size", "10", "--out", "s"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("20010"));
}

#[test]
fn export_writes_prediction_rows_for_the_test_split() {
    let tmp = tempfile::tempdir().unwrap();
    generate_ou(tmp.path(), "40");
    ok(&["train", "--data", "d", "--epochs", "1", "--batch", "8", "--hidden", "6", "--out", "r"], tmp.path());
    ok(&["export", "--run", "r", "--data", "d", "--limit", "3", "--out", "p.csv"], tmp.path());
    let text = fs::read_to_string(tmp.path().join("p.csv")).unwrap();
    assert!(text.starts_with("path_id,t,coord,y,xhat_oracle,observed\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 101);
    let split = njode::run::read_split(&tmp.path().join("r")).unwrap();
    let first_id: usize = text.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert_eq!(first_id, split.test_ids[0]);
}
