//! End-to-end runs of the binary on temporary directories.

use std::path::{Path, PathBuf};
use std::process::Command;

use dissipacert::certify::{self, PassivityIndices};
use dissipacert::io::{self, IoRecord, TrajectorySidecar};
use dissipacert::lti::{self, random_input, StateSpaceModel};
use dissipacert::microgrid;
use dissipacert::signals::Trajectory;
use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dissipacert"));
    c.env("DISSIPACERT_THREADS", "2");
    c
}

fn run(args: &[&str]) -> i32 {
    let out = bin().args(args).output().expect("spawn");
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn csv_count(dir: &Path) -> usize {
    let mut n = 0;
    for sub in ["pre", "post"] {
        if let Ok(entries) = std::fs::read_dir(dir.join(sub)) {
            n += entries.filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv")).count();
        }
    }
    n
}

/// Simulates the default scenario once per test.
fn baseline(tmp: &TempDir) -> PathBuf {
    let config = write(tmp.path(), "baseline.json", "{}");
    let out = tmp.path().join("sim");
    assert_eq!(run(&["simulate", "--config", s(&config), "--out", s(&out)]), 0);
    out
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn write_trajectory(path: &Path, u: Trajectory, y: Trajectory) {
    let meta = TrajectorySidecar {
        dt: u.dt(),
        inputs: io::default_names("u", u.channels()),
        outputs: io::default_names("y", y.channels()),
        origin_offset: 0,
    };
    io::write_record(path, &IoRecord { u, y, meta }).unwrap();
}

fn scalar_system(gain: f64) -> StateSpaceModel {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    StateSpaceModel::discrete(m(0.5), m(1.0), m(gain), 1.0).unwrap()
}

#[test]
fn baseline_config_writes_eight_trajectories_and_a_report() {
    let tmp = TempDir::new().unwrap();
    let out = baseline(&tmp);
    assert_eq!(csv_count(&out), 8);
    assert!(out.join("report.json").is_file());
    assert!(out.join("ground_truth/pre_area1.model.json").is_file());
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["exit_code"], 0);
    assert_eq!(report["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn no_fault_writes_four_trajectories() {
    let tmp = TempDir::new().unwrap();
    let config = write(tmp.path(), "c.json", r#"{"fault_area": "none"}"#);
    let out = tmp.path().join("sim");
    assert_eq!(run(&["simulate", "--config", s(&config), "--out", s(&out)]), 0);
    assert_eq!(csv_count(&out), 4);
    assert!(!out.join("post").exists());
}

#[test]
fn malformed_config_is_an_input_error_with_position() {
    let tmp = TempDir::new().unwrap();
    let config = write(tmp.path(), "c.json", "{\n  \"horizon\": 60,\n  \"ts\": \n}");
    let out = tmp.path().join("sim");
    let o = bin().args(["simulate", "--config", s(&config), "--out", s(&out)]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("line 4 column 1"), "{stderr}");
    assert_eq!(read_json(&out.join("report.json"))["verdict"], "input_error");
}

#[test]
fn unknown_config_field_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let config = write(tmp.path(), "c.json", r#"{"horizon_s": 60}"#);
    assert_eq!(run(&["simulate", "--config", s(&config), "--out", s(&tmp.path().join("o"))]), 2);
}

#[test]
fn bad_arguments_exit_two() {
    assert_eq!(run(&["certify-network", "--dir", "x"]), 2);
    assert_eq!(run(&["no-such-command"]), 2);
    assert_eq!(run(&["--help"]), 0);
}

#[test]
fn zero_trajectory_is_not_informative() {
    let tmp = TempDir::new().unwrap();
    let traj = tmp.path().join("zero.csv");
    write_trajectory(
        &traj,
        Trajectory::new(DMatrix::zeros(1, 100), 1.0, 0).unwrap(),
        Trajectory::new(DMatrix::zeros(1, 100), 1.0, 0).unwrap(),
    );
    let out = tmp.path().join("cert.json");
    let code = run(&["certify-subsystem", "--traj", s(&traj), "--lag", "1", "--order", "1", "--supply", "optimize", "--out", s(&out)]);
    assert_eq!(code, 4);
    assert!(!out.exists());
    assert_eq!(read_json(&tmp.path().join("cert.report.json"))["verdict"], "not_informative");
}

#[test]
fn missing_lag_without_manifest_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let traj = tmp.path().join("t.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u = random_input(&mut rng, 1, 50, 1.0);
    let y = lti::simulate(&scalar_system(1.0), &DVector::zeros(1), &u).unwrap().y;
    write_trajectory(&traj, u, y);
    let out = tmp.path().join("c.json");
    assert_eq!(run(&["certify-subsystem", "--traj", s(&traj), "--supply", "optimize", "--out", s(&out)]), 2);
}

#[test]
fn expansive_system_fails_the_supply_its_mirror_satisfies() {
    // x⁺ = 0.5x + u, y = ±x with Q = 0, S = ½, R = 1. The positive branch
    // is certified by P = ½. The negative one has constant storage at the
    // steady state u = 1, x = 2, where the supply is −2 + 1 < 0.
    let supply = certify::SupplyRate::new(
        DMatrix::zeros(1, 1),
        DMatrix::from_element(1, 1, 0.5),
        DMatrix::from_element(1, 1, 1.0),
    )
    .unwrap();
    let (x, u) = (DVector::from_element(1, 2.0), DVector::from_element(1, 1.0));
    assert!(supply.eval(&u, &(-&x)) < 0.0);

    let tmp = TempDir::new().unwrap();
    let supply_path = write(tmp.path(), "supply.json", r#"{"q": [[0.0]], "s": [[0.5]], "r": [[1.0]]}"#);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u = random_input(&mut rng, 1, 200, 1.0);
    for (gain, expected) in [(1.0, 0), (-1.0, 5)] {
        let traj = tmp.path().join(format!("g{gain}.csv"));
        let y = lti::simulate(&scalar_system(gain), &DVector::zeros(1), &u).unwrap().y;
        write_trajectory(&traj, u.clone(), y);
        let out = tmp.path().join(format!("g{gain}.cert.json"));
        let code = run(&[
            "certify-subsystem", "--traj", s(&traj), "--lag", "1", "--order", "1",
            "--supply", s(&supply_path), "--out", s(&out),
        ]);
        assert_eq!(code, expected, "gain {gain}");
    }
}

#[test]
fn area_three_pre_fault_meets_the_reference_indices() {
    let tmp = TempDir::new().unwrap();
    let sim = baseline(&tmp);
    // The table prints four decimals; its entries are taken at the weak
    // end of their rounding interval.
    let r = &microgrid::reference_indices(false)[2];
    let weak = PassivityIndices::new(r.rho.iter().map(|v| v - 5e-5).collect(), r.nu.iter().map(|v| v - 5e-5).collect()).unwrap();
    let supply = write(tmp.path(), "idx.json", &serde_json::to_string(&weak).unwrap());
    let out = tmp.path().join("area3.json");
    let code = run(&["certify-subsystem", "--traj", s(&sim.join("pre/area3.csv")), "--supply", s(&supply), "--out", s(&out)]);
    assert_eq!(code, 0);
    let cert = read_json(&out);
    assert_eq!(cert["order"], 4);
    assert_eq!(cert["lag"], 2);
    assert_eq!(cert["model"]["a"].as_array().unwrap().len(), 4);
}

#[test]
fn optimized_subsystem_certificate_carries_indices() {
    let tmp = TempDir::new().unwrap();
    let sim = baseline(&tmp);
    let out = tmp.path().join("a1.json");
    assert_eq!(run(&["certify-subsystem", "--traj", s(&sim.join("post/area1.csv")), "--supply", "optimize", "--out", s(&out)]), 0);
    let cert = read_json(&out);
    let rho = cert["indices"]["rho"].as_array().unwrap();
    assert!(rho.iter().all(|v| v.as_f64().unwrap() > 0.0));
}

#[test]
fn baseline_networks_are_certified_pre_and_post_fault() {
    let tmp = TempDir::new().unwrap();
    let sim = baseline(&tmp);
    for window in ["pre", "post"] {
        let out = tmp.path().join(format!("net_{window}"));
        let code = run(&[
            "certify-network", "--dir", s(&sim.join(window)), "--graph", s(&sim.join("graph.json")), "--out", s(&out),
        ]);
        assert_eq!(code, 0, "{window}");
        let cert = read_json(&out.join("network_certificate.json"));
        assert!(cert["verdict"] == "stable" || cert["verdict"] == "asymptotically_stable");
        let table = std::fs::read_to_string(out.join("margins.csv")).unwrap();
        let rows: Vec<&str> = table.lines().skip(1).collect();
        assert_eq!(rows.len(), 4);
        for row in rows {
            for v in row.split(',').skip(3) {
                assert!(v.parse::<f64>().unwrap() >= -1e-3 - 1e-12, "{row}");
            }
        }
        assert!(out.join("margins.gp").is_file());
    }
}

#[test]
fn tampered_graph_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let sim = baseline(&tmp);
    let graph = write(
        tmp.path(),
        "double.json",
        r#"[{"first":[1,2],"second":[2,1]},{"first":[1,2],"second":[3,1]},
            {"first":[2,2],"second":[3,2]},{"first":[4,1],"second":[4,2]}]"#,
    );
    let out = tmp.path().join("net");
    assert_eq!(run(&["certify-network", "--dir", s(&sim.join("pre")), "--graph", s(&graph), "--out", s(&out)]), 2);
    assert!(!out.join("network_certificate.json").exists());
}

#[test]
fn manifest_pointing_at_model_files_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let sim = baseline(&tmp);
    let manifest = sim.join("pre/manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap().replace("area1.csv", "../ground_truth/pre_area1.model.json");
    std::fs::write(&manifest, text).unwrap();
    let out = tmp.path().join("net");
    assert_eq!(run(&["certify-network", "--dir", s(&sim.join("pre")), "--graph", s(&sim.join("graph.json")), "--out", s(&out)]), 2);
}

fn normalized_report(p: &Path) -> Value {
    let mut v = read_json(p);
    v["generated_unix"] = Value::Null;
    for stage in v["stages"].as_array_mut().unwrap() {
        stage["seconds"] = Value::Null;
    }
    v["command"] = Value::Null;
    v["outputs"] = Value::Null;
    v["inputs"].as_array_mut().unwrap().iter_mut().for_each(|i| i["path"] = Value::Null);
    v
}

#[test]
fn simulation_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let config = write(tmp.path(), "c.json", r#"{"dither": {"amplitude": 0.01, "seed": 5}}"#);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(run(&["simulate", "--config", s(&config), "--out", s(out), "--seed", "9"]), 0);
    }
    for f in ["pre/area2.csv", "post/area4.csv", "pre/manifest.json", "graph.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(normalized_report(&a.join("report.json")), normalized_report(&b.join("report.json")));
}

#[test]
fn case_study_reproduces_and_ignores_the_seed() {
    let tmp = TempDir::new().unwrap();
    let mut comparisons = Vec::new();
    for seed in ["1", "2"] {
        let out = tmp.path().join(format!("cs{seed}"));
        let mut args = vec!["reproduce-case-study", "--out", s(&out), "--seed", seed];
        if seed == "2" {
            args.push("--strict-values");
        }
        assert_eq!(run(&args), 0, "seed {seed}");
        comparisons.push(std::fs::read(out.join("comparison.json")).unwrap());
        let table = std::fs::read_to_string(out.join("index_table.csv")).unwrap();
        assert_eq!(table.lines().count(), 1 + 3 * 2 * 4);
        assert_eq!(out.join("index_deltas.csv").exists(), seed == "2");
    }
    assert_eq!(comparisons[0], comparisons[1]);
    let cmp: Value = serde_json::from_slice(&comparisons[0]).unwrap();
    assert_eq!(cmp["pass"], true);
    assert_eq!(cmp["windows"].as_array().unwrap().len(), 6);
}
