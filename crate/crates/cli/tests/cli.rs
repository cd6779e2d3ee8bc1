// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sipht(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sipht"))
        .args(args)
        .current_dir(dir)
        .env_remove("SIPHT_WORKERS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn sweep_then_fit_recovers_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let o = sipht(&["sweep", "--out", "curve.csv", "--count", "64", "--b-s", "4e-6", "--delta", "0.4", "--sipht"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("curve.json").exists());

    let o = sipht(&["fit", "--input", "curve.csv", "--out", "fit.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    let b = v["fit"]["b_s_hat"].as_f64().unwrap();
    let d = v["fit"]["delta_hat"].as_f64().unwrap();
    assert!((b - 4e-6).abs() < 1e-12, "{v}");
    assert!((d - 0.4).abs() < 1e-6);
    assert!((v["symmetry"]["delta"].as_f64().unwrap() - 0.4).abs() < std::f64::consts::TAU / 64.0);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = r#"{
        "name": "from_file",
        "cfg": {"b_d": 1e-4, "b_s": 2e-6, "f_d": 152000.0, "delta": 1.0},
        "mod": {"b_d_mod": 1e-4},
        "sequence": {"kind": "cpmg", "n_pi": 4},
        "sweep": {"parameter": "p_offset", "start": 0.0, "stop": 6.283185307179586, "count": 16, "endpoint": false}
    }"#;
    fs::write(dir.path().join("s.json"), scenario).unwrap();
    let o = sipht(&["sweep", "--config", "s.json", "--count", "24"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("from_file.csv")).unwrap();
    assert_eq!(text.lines().count(), 25);
    assert!(text.starts_with("param,contrast"));
}

#[test]
fn sweeps_are_byte_identical_across_runs_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| ["sweep", "--out", out, "--mode", "numeric-ideal", "--count", "32", "--noise-sigma", "0.01", "--seed", "9"];
    assert!(sipht(&args("a.csv"), dir.path()).status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_sipht"))
        .args(args("b.csv"))
        .current_dir(dir.path())
        .env("SIPHT_WORKERS", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["a.csv", "a.json"] {
        let g = f.replace('a', "b");
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(dir.path().join(g)).unwrap());
    }
}

#[test]
fn simulate_writes_trajectory_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = sipht(&["simulate", "--out", "sim", "--record-steps", "--rabi", "6.0e7"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("sim/trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,bx,by,bz"));
    assert!(csv.lines().count() > 100);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("sim/simulate.json")).unwrap()).unwrap();
    assert!(v["result"]["phi_nv"].as_f64().is_some());
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = sipht(&["fit", "--input", "missing.csv"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error"));

    // a sweep too short to fit
    assert!(sipht(&["sweep", "--out", "short.csv", "--count", "4"], dir.path()).status.success());
    let o = sipht(&["fit", "--input", "short.csv"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = sipht(&["sweep", "--b-d=-1"], dir.path());
    assert_eq!(o.status.code(), Some(1));

    let o = Command::new(env!("CARGO_BIN_EXE_sipht"))
        .args(["fig5", "--out", "f5"])
        .current_dir(dir.path())
        .env("SIPHT_WORKERS", "zero")
        .output()
        .unwrap();
    assert!(!o.status.success());

    let o = sipht(&["fig4a", "--mode", "analytic", "--count", "0"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn figure_commands_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 5] = [
        &["fig2", "--out", "o", "--mode", "analytic", "--count", "64"],
        &["fig3", "--out", "o", "--grid", "0.1,0.5", "--count", "12"],
        &["fig4a", "--out", "o", "--mode", "analytic", "--count", "128"],
        &["fig4b", "--out", "o", "--seeds", "2", "--deltas", "4"],
        &["fig5", "--out", "o", "--noise-sigma", "0.005", "--seed", "3"],
    ];
    for args in runs {
        let o = sipht(args, dir.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    for f in [
        "fig2.json",
        "fig2_sipht_9.60MHz.csv",
        "fig2_conventional_2.80MHz.json",
        "fig3.csv",
        "fig3.json",
        "fig4a.json",
        "fig4a_sipht.csv",
        "fig4b.csv",
        "fig4b_summary.csv",
        "fig5.csv",
        "fig5.json",
    ] {
        assert!(dir.path().join("o").join(f).exists(), "{f}");
    }
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("o/fig4a.json")).unwrap()).unwrap();
    assert_eq!(v["leakage"].as_f64(), Some(0.0));
}

#[test]
fn fit_accepts_external_metadata() {
    let dir = tempfile::tempdir().unwrap();
    assert!(sipht(&["sweep", "--out", "c.csv", "--count", "48"], dir.path()).status.success());
    fs::rename(dir.path().join("c.json"), dir.path().join("meta.json")).unwrap();
    let o = sipht(&["fit", "--input", "c.csv"], dir.path());
    assert!(!o.status.success());
    let o = sipht(&["fit", "--input", "c.csv", "--meta", "meta.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("c_fit.json").exists());
}
