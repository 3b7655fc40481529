use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn tracefem(args: &[&str], config: Option<&str>, dir: &Path, envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tracefem"));
    cmd.args(args).arg("--out").arg(dir.join("out"));
    if let Some(json) = config {
        let path = dir.join("config.json");
        fs::write(&path, json).unwrap();
        cmd.arg("--config").arg(path);
    }
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn csv(dir: &Path, name: &str) -> Vec<Vec<String>> {
    fs::read_to_string(dir.join("out").join(name))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const SMALL_HEAT: &str = r#"{"n_cells": [24], "k_max": 16, "t_final": 0.1, "dt": {"list": [0.02]}, "vtk_every": 2}"#;

#[test]
fn quadcheck_default_passes() {
    let dir = TempDir::new().unwrap();
    let out = tracefem(&["quadcheck"], None, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv(dir.path(), "quadcheck.csv");
    let col = rows[0].iter().position(|h| h == "length_error").unwrap();
    assert!(rows[1][col].parse::<f64>().unwrap() <= 1e-10);
    assert_eq!(rows[1].last().unwrap(), "pass");
}

#[test]
fn under_resolved_circle_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = tracefem(&["quadcheck"], Some(r#"{"geometry": {"radius": 0.05}, "n_cells": [8]}"#), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("assumption"));
}

#[test]
fn config_errors_exit_64() {
    let dir = TempDir::new().unwrap();
    for doc in [r#"{"n_cells": [24"#, r#"{"radius": 1}"#, r#"{"q_vol": 9}"#] {
        let out = tracefem(&["quadcheck"], Some(doc), dir.path(), &[]);
        assert_eq!(out.status.code(), Some(64), "{doc}");
    }
    assert_eq!(tracefem(&["nonsense"], None, dir.path(), &[]).status.code(), Some(64));
    let out = tracefem(&["quadcheck"], None, dir.path(), &[("TRACEFEM_THREADS", "zero")]);
    assert_eq!(out.status.code(), Some(64));
    let out = tracefem(&["converge"], Some(r#"{"n_cells": [12, 24]}"#), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn dtsweep_reproduces_condition_laws() {
    let dir = TempDir::new().unwrap();
    let out = tracefem(&["dtsweep"], Some(r#"{"n_cells": [96]}"#), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let dat = fs::read_to_string(dir.path().join("out/dtsweep.dat")).unwrap();
    let meta = |key: &str| -> f64 {
        let line = dat.lines().find(|l| l.contains(key)).unwrap();
        line.rsplit(": ").next().unwrap().parse().unwrap()
    };
    assert!((meta("slope") + 1.0).abs() <= 0.15);
    assert!(meta("max/min") <= 10.0);
    let rows = csv(dir.path(), "dtsweep.csv");
    assert_eq!(rows.len(), 12);
    let dt_first: f64 = rows[1][2].parse().unwrap();
    let dt_last: f64 = rows[11][2].parse().unwrap();
    assert!((dt_first / dt_last).log10() >= 6.0);
}

#[test]
fn diagnose_marks_every_check() {
    let dir = TempDir::new().unwrap();
    let out = tracefem(&["diagnose"], Some(r#"{"n_cells": [96], "sweep_dt": [1e-3]}"#), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv(dir.path(), "diagnose.csv");
    let first = rows[0].iter().position(|h| h == "ph_ordering").unwrap();
    assert!(rows[1][first..].iter().all(|c| c == "pass"), "{:?}", rows[1]);
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let cfg = r#"{"n_cells": [48], "k_max": 64, "sweep_dt": [1e-2, 1e-5], "seed": 11}"#;
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert!(tracefem(&["diagnose"], Some(cfg), a.path(), &[("TRACEFEM_THREADS", "1")]).status.success());
    assert!(tracefem(&["diagnose"], Some(cfg), b.path(), &[("TRACEFEM_THREADS", "3")]).status.success());
    let read = |d: &TempDir| fs::read(d.path().join("out/diagnose.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn heat_writes_logs_and_snapshots() {
    let dir = TempDir::new().unwrap();
    let out = tracefem(&["heat"], Some(SMALL_HEAT), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let steps = csv(dir.path(), "heat_n24_dt0.csv");
    assert_eq!(steps.len(), 1 + 6);
    for step in [0, 2, 4] {
        assert!(dir.path().join(format!("out/heat_n24_dt0_{step:06}.vtk")).exists());
    }
    let summary = csv(dir.path(), "heat.csv");
    let e = summary[0].iter().position(|h| h == "e_total").unwrap();
    assert!(summary[1][e].parse::<f64>().unwrap() > 0.0);

    let plain = TempDir::new().unwrap();
    assert!(tracefem(&["heat", "--no-time-stab"], Some(SMALL_HEAT), plain.path(), &[]).status.success());
    assert_ne!(
        fs::read(dir.path().join("out/heat.csv")).unwrap(),
        fs::read(plain.path().join("out/heat.csv")).unwrap()
    );
}

#[test]
fn project_exports_matrices() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"n_cells": [24, 48], "k_max": 16, "export_matrices": true, "data": {"kind": "decaying", "k": 2}}"#;
    let out = tracefem(&["project"], Some(cfg), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let mtx = fs::read_to_string(dir.path().join("out/matrices_n24/m_star.mtx")).unwrap();
    assert!(mtx.starts_with("%%MatrixMarket matrix coordinate real symmetric\n"));
    let rows = csv(dir.path(), "project.csv");
    let e: Vec<f64> = rows[1..].iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(e[1] < e[0] / 3.0, "{e:?}");
}

#[test]
fn converge_reports_rates_and_rule() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"n_cells": [12, 24, 48], "k_max": 16, "t_final": 0.25, "data": {"kind": "decaying", "k": 2}}"#;
    let out = tracefem(&["converge"], Some(cfg), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dat = fs::read_to_string(dir.path().join("out/converge.dat")).unwrap();
    assert!(dat.contains("# dt_rule: dt = 0.25 * h^2"));
    let rates = csv(dir.path(), "converge_rates.csv");
    assert_eq!(rates.len(), 6);
    let rows = csv(dir.path(), "converge.csv");
    let e: Vec<f64> = rows[1..].iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(e.windows(2).all(|w| w[1] < w[0]));
}
