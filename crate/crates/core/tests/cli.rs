use std::path::Path;
use std::process::Command;

use otmorph::cli::VerifyReport;
use otmorph::fields::write_pgm16;
use otmorph::IterationReport;

fn otmorph() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_otmorph"));
    c.env("OTMORPH_THREADS", "0");
    c
}

fn bump(n: usize, cx: f64) -> Vec<u16> {
    let mut px = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let (x, y) = (c as f64 / (n - 1) as f64, r as f64 / (n - 1) as f64);
            let v = (-((x - cx).powi(2) + (y - 0.5).powi(2)) / 0.02).exp();
            px.push((v * 65535.0).round() as u16);
        }
    }
    px
}

fn morph(dir: &Path, a: &Path, b: &Path, out: &str, extra: &[&str]) -> i32 {
    let status = otmorph()
        .args(["morph", "--rho0"])
        .arg(a)
        .arg("--rho1")
        .arg(b)
        .arg("--out")
        .arg(dir.join(out))
        .args(["--nx", "17", "--ny", "17", "--nt", "5"])
        .args(extra)
        .status()
        .unwrap();
    status.code().unwrap()
}

fn verify(run: &Path) -> (i32, VerifyReport) {
    let status = otmorph().arg("verify").arg("--run").arg(run).status().unwrap();
    let report = serde_json::from_str(&std::fs::read_to_string(run.join("verify.json")).unwrap()).unwrap();
    (status.code().unwrap(), report)
}

#[test]
fn identity_pair_runs_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.pgm");
    write_pgm16(&a, 30, 30, &bump(30, 0.5)).unwrap();
    assert_eq!(morph(dir.path(), &a, &a, "run", &[]), 0);

    let run = dir.path().join("run");
    let report: IterationReport =
        serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert!(report.last().transport_cost <= 1e-10);
    let frames: Vec<Vec<u8>> = (0..5)
        .map(|k| std::fs::read(run.join("frames").join(format!("frame_{k:04}.pgm"))).unwrap())
        .collect();
    assert!(frames.windows(2).all(|w| w[0] == w[1]));

    let config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    for key in ["beta_min", "cg_tol", "cg_max_iter", "fp_tol", "rk4_substeps", "legacy_rhs", "relaxation"] {
        assert!(config.get(key).is_some(), "config.json lacks {key}");
    }
    assert_eq!(config["nt"], 5);

    let (code, v) = verify(&run);
    assert_eq!(code, 0, "{v:?}");
    assert!(v.checks.iter().all(|c| c.passed));

    // corrupt one velocity byte
    let p = run.join("velocity.f64");
    let mut bytes = std::fs::read(&p).unwrap();
    bytes[100] ^= 0x40;
    std::fs::write(&p, bytes).unwrap();
    let (code, v) = verify(&run);
    assert_eq!(code, 3);
    assert!(!v.checks.iter().find(|c| c.name == "conservation").unwrap().passed);
}

#[test]
fn verify_without_artifacts_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let status = otmorph().arg("verify").arg("--run").arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.pgm");
    let out = otmorph()
        .args(["--json-errors", "morph", "--rho0"])
        .arg(&missing)
        .arg("--rho1")
        .arg(&missing)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "ingestion");
    assert!(err["message"].as_str().unwrap().contains("nowhere.pgm"));
    assert!(err["path"].as_str().unwrap().ends_with("nowhere.pgm"));
}

#[test]
fn boundary_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.pgm"), dir.path().join("b.pgm"));
    let mut px = [20000u16; 100];
    write_pgm16(&a, 10, 10, &px).unwrap();
    px[0] = 50000;
    write_pgm16(&b, 10, 10, &px).unwrap();
    let out = otmorph()
        .args(["morph", "--rho0"])
        .arg(&a)
        .arg("--rho1")
        .arg(&b)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("endpoint hypothesis"));
}

#[test]
fn sequential_reruns_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.pgm"), dir.path().join("b.pgm"));
    write_pgm16(&a, 24, 24, &bump(24, 0.45)).unwrap();
    write_pgm16(&b, 24, 24, &bump(24, 0.55)).unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"fp_max_iter": 4}"#).unwrap();
    let extra = ["--config", cfg.to_str().unwrap()];
    assert_eq!(morph(dir.path(), &a, &b, "one", &extra), 2);
    assert_eq!(morph(dir.path(), &a, &b, "two", &extra), 2);
    let read = |run: &str, f: &str| std::fs::read(dir.path().join(run).join(f)).unwrap();
    for f in ["rho.f64", "velocity.f64", "rho.json", "config.json"] {
        assert_eq!(read("one", f), read("two", f), "{f}");
    }
    let strip = |run: &str| {
        let mut r: IterationReport = serde_json::from_slice(&read(run, "report.json")).unwrap();
        r.timings = Default::default();
        r
    };
    assert_eq!(strip("one"), strip("two"));
}

#[test]
fn convergence_study_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.json");
    std::fs::write(&cfg, r#"{"elliptic_cells": [8, 16, 32], "transport_cells": [8, 16]}"#).unwrap();
    let status = otmorph()
        .arg("convergence")
        .arg("--out")
        .arg(dir.path().join("study"))
        .arg("--config")
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("study").join("convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "case,h,error,order");
    assert_eq!(lines.len(), 6);
    let field = |l: &str, i: usize| l.split(',').nth(i).unwrap().to_string();
    let order: f64 = field(lines[3], 3).parse().unwrap();
    assert!((order - 2.0).abs() < 0.2);
    let e8: f64 = field(lines[4], 2).parse().unwrap();
    let e16: f64 = field(lines[5], 2).parse().unwrap();
    assert!(e16 < e8);

    std::fs::write(&cfg, r#"{"elliptic_cells": [], "transport_cells": []}"#).unwrap();
    let status = otmorph()
        .arg("convergence")
        .arg("--out")
        .arg(dir.path().join("empty"))
        .arg("--config")
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("empty").join("convergence.csv")).unwrap();
    assert_eq!(csv, "case,h,error,order\n");
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"beta_min": 0.9}"#).unwrap();
    let out = otmorph()
        .args(["--json-errors", "convergence", "--out"])
        .arg(dir.path().join("x"))
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "invalid-config");
}
