use std::path::Path;
use std::process::{Command, Output};

fn nlchns(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlchns")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = "nx = 16\nny = 16\nkernel_width = 0.15625\ndt = 1e-3\nsteps = 10\n";

#[test]
fn run_then_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = nlchns(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("series.csv").exists());
    let o = nlchns(&["diagnose", out.to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["mass"]["holds"], true);
    assert!(out.join("diagnose.json").exists());
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(nlchns(&["run-ch", "--config", &cfg, "--seed", "3", "--out", a.to_str().unwrap()]).status.success());
    let manifest = a.join("manifest.json");
    assert!(nlchns(&["run-ch", "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]).status.success());
    assert_eq!(std::fs::read(a.join("series.csv")).unwrap(), std::fs::read(b.join("series.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let cfg = write_config(dir.path(), "bogus = 1\n");
    let o = nlchns(&["run", "--config", &cfg, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown-key"));

    let cfg = write_config(dir.path(), &format!("{SMALL}kernel_mass = 0.5\n"));
    let o = nlchns(&["run", "--config", &cfg, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("beta-margin"));

    let o = nlchns(&["run", "--preset", "nope", "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    let o = nlchns(&["run", "--config", "/nonexistent/run.cfg", "--out", out]);
    assert_eq!(o.status.code(), Some(1));

    // explicit stepping far beyond its stability limit
    let cfg = write_config(dir.path(), &format!("{SMALL}scheme = explicit\ndt = 1e-1\n"));
    let o = nlchns(&["run-ch", "--config", &cfg, "--out", out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(Path::new(out).join("manifest.json").exists());
}

#[test]
fn zero_steps_writes_manifest_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}steps = 0\n"));
    let out = dir.path().join("out");
    assert!(nlchns(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let names: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec!["manifest.json"]);
}

#[test]
fn kernel_report_and_potential_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = nlchns(&["kernel-report", "--preset", "bubble-swirl", "--out", out]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["beta"].as_f64().unwrap() > 1.0);
    assert!(nlchns(&["potential-table", "--points", "11", "--out", out]).status.success());
    let table = std::fs::read_to_string(dir.path().join("potential_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 12);
}
