//! End-to-end runs of the `cyclicity` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cyclicity"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary starts")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

/// Copies an example config into `dir`, writing its outputs to `dir/<out>`.
fn config_in(dir: &Path, example: &str, out: &str, edit: impl Fn(String) -> String) -> PathBuf {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(example);
    let body: String = std::fs::read_to_string(src)
        .unwrap()
        .lines()
        .map(|l| if l.starts_with("output") { format!("output = \"{out}\"") } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    let path = dir.join(format!("{out}.toml"));
    std::fs::write(&path, edit(body)).unwrap();
    path
}

fn model_config(dir: &Path, kind: &str) -> PathBuf {
    let path = dir.join(format!("{kind}.toml"));
    std::fs::write(&path, format!("[model]\nkind = \"{kind}\"\n")).unwrap();
    path
}

#[test]
fn empty_window_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "enharmonic.toml", "run", |s| s.replace("window = [0.0, 3.0]", "window = [3.0, 3.0]"));
    let out = run(&["branch", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(text(&out).contains("window"));
    assert!(!dir.path().join("run").join("manifest.json").exists());
}

#[test]
fn no_regen_on_an_empty_directory_reports_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "enharmonic.toml", "run", |s| s);
    let out = run(&["verify", "--config", cfg.to_str().unwrap(), "--no-regen"]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(text(&out).contains("missing artifacts"));
}

#[test]
fn bad_arguments_exit_with_two() {
    let out = run(&["orbit", "--amplitude", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn enharmonic_run_verifies_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let a = config_in(dir.path(), "enharmonic.toml", "a", |s| s);
    let b = config_in(dir.path(), "enharmonic.toml", "b", |s| s);
    let out = run(&["verify", "--config", a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let report = text(&out);
    for id in ["AC-1", "AC-2", "AC-3", "AC-6", "AC-7", "AC-8", "AC-9"] {
        let line = report.lines().find(|l| l.starts_with(id)).unwrap_or_else(|| panic!("{id} missing:\n{report}"));
        assert!(line.contains("PASS"), "{line}");
    }

    // A second look at the finished directory also checks the manifest.
    let out = run(&["verify", "--config", a.to_str().unwrap(), "--no-regen"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    assert!(text(&out).lines().any(|l| l.starts_with("integrity") && l.contains("PASS")), "{}", text(&out));

    // Identical inputs give identical files.
    let out = run(&["verify", "--config", b.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    for f in ["branch.csv", "chart.csv", "curves.csv"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }

    let fig = dir.path().join("figure.json");
    let out = run(&["export-figure-data", "--config", a.to_str().unwrap(), "--out", fig.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let spec: serde_json::Value = serde_json::from_slice(&std::fs::read(&fig).unwrap()).unwrap();
    assert_eq!(spec["expected_families"], 1);
    assert!(spec["expected_curves"].as_u64().unwrap() >= 10);
    let out = run(&["export-figure-data", "--config", a.to_str().unwrap(), "--amplitude-cap", "0"]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(text(&out).contains("no curves"));

    // Scale r by 1.01 in every row of the first branch file.
    let path = dir.path().join("a").join("branch.csv");
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    let header = rdr.headers().unwrap().clone();
    let col = header.iter().position(|h| h == "r").unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let row: Vec<String> = rec
            .iter()
            .enumerate()
            .map(|(i, v)| if i == col { format!("{:.16e}", v.parse::<f64>().unwrap() * 1.01) } else { v.to_string() })
            .collect();
        w.write_record(&row).unwrap();
    }
    std::fs::write(&path, w.into_inner().unwrap()).unwrap();
    let out = run(&["verify", "--config", a.to_str().unwrap(), "--no-regen"]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));
    let report = text(&out);
    let line = report.lines().find(|l| l.starts_with("AC-1")).unwrap();
    assert!(line.contains("FAIL"), "{report}");
    assert!(report.contains("residual"), "{report}");
}

#[test]
fn single_orbit_commands() {
    let dir = tempfile::tempdir().unwrap();
    let model = model_config(dir.path(), "hutchinson-log");
    let m = model.to_str().unwrap();

    let traj = dir.path().join("traj.csv");
    let out = run(&[
        "simulate", "--model-config", m, "--r", "1.2", "--history", "const:0.1", "--t-end", "20", "--out",
        traj.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let mut rdr = csv::Reader::from_path(&traj).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["t", "x", "x_delayed", "residual"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 20 * 128 + 1);
    let last: f64 = rows.last().unwrap()[1].parse().unwrap();
    // Below the Hopf delay pi/2 the equilibrium attracts.
    assert!(last.abs() < 0.05, "{last}");

    let orbit = dir.path().join("orbit.json");
    let out = run(&["orbit", "--model-config", m, "--amplitude", "1.0", "--out", orbit.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let rec: serde_json::Value = serde_json::from_slice(&std::fs::read(&orbit).unwrap()).unwrap();
    assert_eq!(rec["a"], 1.0);
    assert!(rec["residual"].as_f64().unwrap() < 1e-8);

    let fl = dir.path().join("floquet.json");
    let out = run(&[
        "floquet", "--model-config", m, "--orbit", orbit.to_str().unwrap(), "--out", fl.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(&fl).unwrap()).unwrap();
    assert!(rep["trivial_error"].as_f64().unwrap() < 1e-4);
    assert!(rep["mu_c"].as_f64().unwrap() > 0.0);

    let out = run(&["simulate", "--model-config", m, "--r", "1", "--history", "sin(t)", "--t-end", "1"]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
}
