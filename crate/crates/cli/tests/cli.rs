//! Interface tests for the binary: exit codes, output files, determinism.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_cco")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cco_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const MINIMAL_RUN: &str = r#"
solver = "sonx"

[problem]
kind = "fcco-linear"
n = 6
d = 3
d1 = 1
sigma = 0.1
seed = 2

[hyperparameters]
eta = 1e-3
tau = 0.5
b1 = 2
b2 = 2
iterations = 10
seed = 4
"#;

#[test]
fn run_minimal_config_writes_ten_trace_rows() {
    let dir = temp_dir("run_min");
    let config = write_config(&dir, "run.toml", MINIMAL_RUN);
    let out = dir.join("out");
    let status = Command::new(bin())
        .args(["run"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 11); // header + 10 rows
    assert!(out.join("summary.json").exists());
    assert!(out.join("checkpoint.json").exists());
}

#[test]
fn run_rejects_negative_step_size() {
    let dir = temp_dir("bad_eta");
    let config = write_config(
        &dir,
        "bad.toml",
        r#"
solver = "sonx"
[problem]
kind = "fcco-linear"
[hyperparameters]
eta = -1.0
"#,
    );
    let status = Command::new(bin()).args(["run"]).arg(&config).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn run_missing_dataset_exits_three() {
    let dir = temp_dir("missing_data");
    let config = write_config(
        &dir,
        "missing.toml",
        r#"
solver = "tpauc-sonx"
[problem]
kind = "csv-binary"
path = "/nonexistent/cco-data.csv"
"#,
    );
    let status = Command::new(bin()).args(["run"]).arg(&config).status().unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn run_divergence_exits_four() {
    let dir = temp_dir("diverge");
    // an absurd step size launches the first iterate past the guard radius
    let config = write_config(
        &dir,
        "diverge.toml",
        r#"
solver = "sonx"
[problem]
kind = "fcco-linear"
n = 6
d = 3
d1 = 1
sigma = 0.1
seed = 2
[hyperparameters]
eta = 1e7
tau = 0.5
b1 = 2
b2 = 2
iterations = 100
seed = 4
"#,
    );
    let status = Command::new(bin()).args(["run"]).arg(&config).status().unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn diagnose_suite_passes_on_synthetic_problem() {
    let dir = temp_dir("diag_ok");
    let config = write_config(
        &dir,
        "diag.toml",
        r#"
solver = "sonx"
[problem]
kind = "fcco-quadratic"
n = 6
d = 4
sigma = 0.0
seed = 5
[diagnostics]
probes = ["oracle", "weak-convexity", "finite-difference", "moreau"]
inner_iterations = 3000
"#,
    );
    let output = Command::new(bin())
        .args(["diagnose"])
        .arg(&config)
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&output.stdout);
    assert_eq!(output.status.code(), Some(0), "output: {text}");
    assert_eq!(text.matches("PASS").count(), 4, "output: {text}");
}

#[test]
fn diagnose_small_rho_exits_five() {
    let dir = temp_dir("diag_bad");
    let config = write_config(
        &dir,
        "diag.toml",
        r#"
solver = "sonx"
[problem]
kind = "fcco-quadratic"
n = 6
d = 4
sigma = 0.0
seed = 5
[diagnostics]
probes = ["weak-convexity"]
rho_override = 1e-4
"#,
    );
    let output = Command::new(bin())
        .args(["diagnose"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&output.stdout).contains("FAIL"));
}

#[test]
fn diagnose_missing_checkpoint_exits_three() {
    let dir = temp_dir("diag_ckpt");
    let config = write_config(
        &dir,
        "diag.toml",
        r#"
solver = "sonx"
[problem]
kind = "fcco-linear"
[diagnostics]
probes = ["finite-difference"]
checkpoint = "/nonexistent/checkpoint.json"
"#,
    );
    let status = Command::new(bin())
        .args(["diagnose"])
        .arg(&config)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn diagnose_accepts_run_checkpoint() {
    let dir = temp_dir("ckpt_chain");
    let run_config = write_config(&dir, "run.toml", MINIMAL_RUN);
    let out = dir.join("out");
    assert!(Command::new(bin())
        .args(["run"])
        .arg(&run_config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let diag_config = write_config(
        &dir,
        "diag.toml",
        &format!(
            r#"
solver = "sonx"
[problem]
kind = "fcco-linear"
n = 6
d = 3
d1 = 1
sigma = 0.1
seed = 2
[diagnostics]
probes = ["finite-difference", "moreau"]
inner_iterations = 2000
checkpoint = "{}"
"#,
            out.join("checkpoint.json").display()
        ),
    );
    let output = Command::new(bin())
        .args(["diagnose"])
        .arg(&diag_config)
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "output: {}",
        String::from_utf8_lossy(&output.stdout)
    );
}

const COMPARE_BASE: &str = r#"
solver = "sonx"

[problem]
kind = "fcco-linear"
n = 10
d = 4
d1 = 1
sigma = 0.2
seed = 3

[hyperparameters]
eta = 5e-3
tau = 0.25
b1 = 3
b2 = 2
iterations = 40
seed = 6
track_estimator_error = true
"#;

#[test]
fn compare_emits_one_column_per_gamma() {
    let dir = temp_dir("compare2");
    let config = write_config(
        &dir,
        "cmp.toml",
        &format!("{COMPARE_BASE}\n[compare]\ngammas = [0.0, \"default\"]\n"),
    );
    let out = dir.join("out");
    let status = Command::new(bin())
        .args(["compare"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .args(["--jobs", "2"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    // iter + 2 objective columns + 2 estimator-error columns
    assert_eq!(header.split(',').count(), 5, "header: {header}");
    assert_eq!(csv.lines().count(), 41);

    // matched seeds: the sweep is deterministic
    let out2 = dir.join("out2");
    assert!(Command::new(bin())
        .args(["compare"])
        .arg(&config)
        .arg("--out")
        .arg(&out2)
        .status()
        .unwrap()
        .success());
    let csv2 = std::fs::read_to_string(out2.join("compare.csv")).unwrap();
    assert_eq!(csv, csv2);
}

#[test]
fn compare_single_gamma_single_column() {
    let dir = temp_dir("compare1");
    let config = write_config(
        &dir,
        "cmp.toml",
        &format!("{COMPARE_BASE}\n[compare]\ngammas = [0.5]\n"),
    );
    let out = dir.join("out");
    assert!(Command::new(bin())
        .args(["compare"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let csv = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 3);
}

#[test]
fn compare_empty_sweep_exits_two() {
    let dir = temp_dir("compare0");
    let config = write_config(
        &dir,
        "cmp.toml",
        &format!("{COMPARE_BASE}\n[compare]\ngammas = []\n"),
    );
    let status = Command::new(bin())
        .args(["compare"])
        .arg(&config)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn moreau_checkpoints_populate_the_trace() {
    let dir = temp_dir("moreau_every");
    let config = write_config(
        &dir,
        "run.toml",
        r#"
solver = "sonx"
[problem]
kind = "fcco-linear"
n = 8
d = 3
d1 = 1
sigma = 0.05
seed = 2
[hyperparameters]
eta = 5e-3
tau = 0.5
b1 = 4
b2 = 4
iterations = 100
seed = 3
trace_every = 10
[diagnostics]
moreau = true
moreau_every = 20
inner_iterations = 1500
"#,
    );
    let out = dir.join("out");
    assert!(Command::new(bin())
        .args(["run"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let with_moreau = trace
        .lines()
        .skip(1)
        .filter(|l| !l.ends_with(','))
        .count();
    assert_eq!(with_moreau, 5, "trace: {trace}"); // iterations 0, 20, 40, 60, 80
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"moreau_mean_square\":"));
    assert!(!summary.contains("\"moreau_mean_square\": null"));
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = temp_dir("seed_flag");
    let config = write_config(&dir, "run.toml", MINIMAL_RUN);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for (out, seed) in [(&out_a, "4"), (&out_b, "5")] {
        assert!(Command::new(bin())
            .args(["run"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .args(["--seed", seed])
            .status()
            .unwrap()
            .success());
    }
    let a = std::fs::read(out_a.join("trace.csv")).unwrap();
    let b = std::fs::read(out_b.join("trace.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn trace_every_flag_thins_the_trace() {
    let dir = temp_dir("cadence");
    let config = write_config(&dir, "run.toml", MINIMAL_RUN);
    let out = dir.join("out");
    assert!(Command::new(bin())
        .args(["run"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .args(["--trace-every", "5"])
        .status()
        .unwrap()
        .success());
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3); // header + t = 0, 5
}
