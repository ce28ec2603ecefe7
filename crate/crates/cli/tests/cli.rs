use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn moescale(args: &[&str]) -> Output {
    moescale_in(Path::new("."), args)
}

fn moescale_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moescale"))
        .args(args)
        .current_dir(dir)
        .env_remove("MOESCALE_SEED")
        .env_remove("MOESCALE_BUNDLE")
        .env("MOESCALE_THREADS", "2")
        .output()
        .expect("spawn moescale")
}

fn ok(args: &[&str]) -> Output {
    ok_in(Path::new("."), args)
}

fn ok_in(dir: &Path, args: &[&str]) -> Output {
    let out = moescale_in(dir, args);
    assert_eq!(out.status.code(), Some(0), "{args:?}\nstderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_line(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "expected one stderr line, got {err:?}");
    lines[0].to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const WORKED: &str = r#"{"n_layers":4,"d_model":512,"n_heads":8,"d_head":64,"e_total":8,"e_active":2,"n_ctx":2048,"n_vocab":50432}"#;

const DESIGN: &str = r#"{
  "budgets": [3e19, 1e20, 1e21],
  "sparsities": [0.0, 0.5, 0.75, 0.9],
  "sizes_per_cell": 7,
  "size_span": [1e8, 3e10],
  "seed": 3
}"#;

#[test]
fn usage_errors_exit_2() {
    assert_eq!(moescale(&[]).status.code(), Some(2));
    assert_eq!(moescale(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(moescale(&["fit-law", "--runs", "x.csv"]).status.code(), Some(2));
    assert_eq!(moescale(&["fit-law", "--runs", "x.csv", "--form", "sideways", "--out", "o.json"]).status.code(), Some(2));
    assert_eq!(moescale(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_names_the_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = moescale(&["fit-law", "--runs", s(&missing), "--form", "dense", "--out", s(&dir.path().join("o.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let line = error_line(&out);
    assert!(line.starts_with("moescale-error["), "{line}");
    assert!(line.contains("nope.csv"), "{line}");
}

#[test]
fn malformed_runs_report_row_and_column() {
    let dir = TempDir::new().unwrap();
    let runs = write(
        dir.path(),
        "runs.csv",
        "run_id,n_total,n_active,sparsity,tokens,compute,loss\na,1e9,5e8,0.5,1e10,3e19,2.5\nb,1e9,5e8,0.5,1e10,3e19,-1\n",
    );
    let out = moescale(&["fit-surface", "--runs", s(&runs), "--out", s(&dir.path().join("o.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let line = error_line(&out);
    assert!(line.starts_with("moescale-error[load]"), "{line}");
    assert!(line.contains("loss"), "{line}");
}

#[test]
fn flops_reports_worked_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "cfg.json", WORKED);
    let json = dir.path().join("flops.json");
    let out = ok(&["flops", "--config", s(&cfg), "--breakdown", "--json", s(&json)]);
    assert!(!out.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    let ratio = v["estimator_ratio"].as_f64().unwrap();
    assert!((ratio - 1.1517).abs() < 1e-4, "{ratio}");

    let bad = write(dir.path(), "bad.json", r#"{"n_layers":4,"d_model":512,"n_heads":8,"d_head":64,"e_total":2,"e_active":8,"n_ctx":1,"n_vocab":1}"#);
    let out = moescale(&["flops", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out).contains("bad.json"));
}

const PIPELINE_OUTPUTS: [&str; 7] =
    ["runs.csv", "law.json", "surface.json", "law_frontier.csv", "surface_frontier.json", "report.csv", "bundle.json"];

fn pipeline(dir: &Path) -> Vec<Vec<u8>> {
    write(dir, "design.json", DESIGN);
    ok_in(dir, &["synth", "--truth", "published", "--design", "design.json", "--out", "runs.csv"]);
    ok_in(dir, &["fit-law", "--runs", "runs.csv", "--form", "dense", "--out", "law.json"]);
    ok_in(dir, &["fit-surface", "--runs", "runs.csv", "--budget", "1e20", "--degrees", "2,2,1", "--out", "surface.json"]);
    ok_in(dir, &["frontier", "--fit", "law.json", "--budgets", "1e20,1e21", "--fix-sparsity", "0", "--out", "law_frontier.csv"]);
    ok_in(dir, &["frontier", "--fit", "surface.json", "--fix-size", "1e9,1e10", "--out", "surface_frontier.json"]);
    let out = ok_in(
        dir,
        &["--bundle", "bundle.json", "report", "--fit", "law.json", "--fit", "surface.json", "--out", "report.csv"],
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("fit_mse"));
    PIPELINE_OUTPUTS.iter().map(|n| std::fs::read(dir.join(n)).unwrap()).collect()
}

#[test]
fn synth_fit_frontier_report_pipeline_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    for (name, (x, y)) in PIPELINE_OUTPUTS.iter().zip(first.iter().zip(&second)) {
        assert!(x == y, "{name} differs between runs");
    }

    let law: serde_json::Value = serde_json::from_slice(&first[1]).unwrap();
    assert_eq!(law["kind"], "scaling_law");
    let alpha = law["coeffs"]["alpha"].as_f64().unwrap();
    assert!(alpha > 0.0 && alpha < 1.0, "{alpha}");
    let csv = String::from_utf8(first[3].clone()).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    let frontier: serde_json::Value = serde_json::from_slice(&first[4]).unwrap();
    assert_eq!(frontier["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn seed_changes_noisy_synth_only_when_given() {
    let dir = TempDir::new().unwrap();
    let noisy = DESIGN.replace("\"seed\": 3", "\"seed\": 3, \"noise_sigma\": 0.01");
    let design = write(dir.path(), "design.json", &noisy);
    let (a, b, c) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("c.csv"));
    ok(&["synth", "--truth", "published", "--design", s(&design), "--out", s(&a)]);
    ok(&["synth", "--truth", "published", "--design", s(&design), "--out", s(&b)]);
    ok(&["--seed", "11", "synth", "--truth", "published", "--design", s(&design), "--out", s(&c)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn unknown_design_field_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let design = write(dir.path(), "design.json", r#"{"sizes_per_cell": 3, "size_span": [1e8, 1e9], "noise": 1}"#);
    let out = moescale(&["synth", "--truth", "published", "--design", s(&design), "--out", s(&dir.path().join("r.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out).contains("design.json"));
}
