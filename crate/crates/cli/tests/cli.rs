//! End-to-end tests of the `ehl` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ehl_core::cli::sha256_hex;
use tempfile::TempDir;

fn ehl() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ehl"));
    c.env_remove("EHL_THREADS");
    c
}

fn scratch() -> TempDir {
    tempfile::tempdir().unwrap()
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.ini"))
}

fn run(args: &[&str]) -> Output {
    ehl().args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.ini");
    fs::write(&p, text).unwrap();
    p
}

const SMALL_D3: &str = "\
[domain]
kind = ball_complement
d = 3
R = 1

[time]
t_final = 6
h = 0.1

[lsi]
taus = 0, 1

[output]
name = small
snapshots = ends
";

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn manifest_files(dir: &Path) -> Vec<(String, String)> {
    manifest(dir)["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| (f["path"].as_str().unwrap().to_string(), f["sha256"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn normalize_on_the_half_line_reproduces_closed_form() {
    let tmp = scratch();
    let dir = tmp.path();
    let out = dir.join("out");
    let o = run(&["normalize", "--config", preset("d1-pointmass").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("normalization.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("tau,I,K,Iprime,err"));
    let mut rows = 0;
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let (tau, k) = (cols[0], cols[2]);
        assert!((k / (2.0 * (-2.0 * tau).exp()) - 1.0).abs() <= 1e-10, "tau = {tau}");
        rows += 1;
    }
    assert_eq!(rows, 21);
}

#[test]
fn rates_report_has_three_exponents() {
    let tmp = scratch();
    let dir = tmp.path();
    let out = dir.join("out");
    let o = run(&["rates", "--config", preset("d1-pointmass").to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for mode in ["weighted_l1", "plain_l1", "uniform_rel"] {
        let alpha = report["exponents"][mode]["alpha"].as_f64().unwrap();
        assert!(alpha < 0.0, "{mode}: {alpha}");
    }
    // The report echoes the resolved configuration, defaults included.
    assert_eq!(report["config"]["time"]["nodes"], 4001);
    assert_eq!(report["config"]["domain"]["kind"], "half_line");
    assert!(out.join("errors.csv").exists());
}

#[test]
fn manifest_lists_every_file_with_its_digest() {
    let tmp = scratch();
    let dir = tmp.path();
    let cfg = write_config(dir, SMALL_D3);
    let out = dir.join("out");
    let o = run(&["all", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let files = manifest_files(&out);
    for (path, digest) in &files {
        assert_eq!(&sha256_hex(&fs::read(out.join(path)).unwrap()), digest, "{path}");
    }
    let mut on_disk: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let mut listed: Vec<String> = files.into_iter().map(|f| f.0).collect();
    listed.sort();
    assert_eq!(on_disk, listed);
    for expected in ["profile.csv", "normalization.csv", "solve.csv", "entropy.csv", "lsi.csv", "errors.csv", "mass.csv", "report.json", "field_0000.csv"] {
        assert!(listed.iter().any(|f| f == expected), "{expected} missing");
    }
    assert!(manifest(&out)["generated_at"].as_u64().unwrap() > 0);
}

#[test]
fn identical_configs_give_identical_bodies() {
    let tmp = scratch();
    let dir = tmp.path();
    let cfg = write_config(dir, SMALL_D3);
    let a = dir.join("a");
    let b = dir.join("b");
    assert_eq!(run(&["all", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "--quiet"]).status.code(), Some(0));
    let o = ehl()
        .env("EHL_THREADS", "1")
        .args(["all", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--quiet"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(manifest_files(&a), manifest_files(&b));
}

#[test]
fn unknown_subcommand_exits_2_with_usage() {
    let o = run(&["plot", "--config", preset("d3-shell").to_str().unwrap(), "--out", "/nonexistent"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("unknown subcommand") && err.contains("usage:"), "{err}");
}

#[test]
fn config_errors_exit_2_and_name_the_line() {
    let tmp = scratch();
    let dir = tmp.path();
    let cfg = write_config(dir, "[domain]\nkind = ball_complement\nd = 1\nR = 1\n");
    let o = run(&["profile", "--config", cfg.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let cfg = write_config(dir, "[domain]\nkind = half_line\nx0 = 0\nx0 = 1\n");
    let o = run(&["profile", "--config", cfg.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4") && err.contains("line 3"), "{err}");

    let o = run(&["profile", "--config", dir.join("missing.ini").to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.join("out").exists());
}

#[test]
fn missing_arguments_exit_2() {
    let o = run(&["profile"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn computation_errors_exit_1() {
    let tmp = scratch();
    let dir = tmp.path();
    // A tail cut at eps = 0.5 truncates the grid so badly that the rescaled
    // density no longer has unit mass.
    let cfg = write_config(dir, "[domain]\nkind = half_line\nx0 = 0\n[time]\neps_tail = 0.5\n");
    let o = run(&["entropy", "--config", cfg.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("entropy"));
}

#[test]
fn invalid_thread_cap_is_a_usage_error() {
    let tmp = scratch();
    let dir = tmp.path();
    let o = ehl()
        .env("EHL_THREADS", "zero")
        .args(["profile", "--config", preset("d3-shell").to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("EHL_THREADS"));
}
