use std::path::Path;
use std::process::{Command, Output};

use inperturb::harness::report::CSV_HEADER;
use inperturb::solver::ModelArtifact;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inperturb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_raw(path: &Path, n: usize) {
    let mut text = String::from("f1,f2,f3,target\n");
    for i in 0..n {
        let t = i as f64 / n as f64;
        text.push_str(&format!(
            "{},{},{},{}\n",
            3.0 * t,
            1.0 - t,
            (7.0 * t).sin(),
            10.0 * t - 4.0
        ));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn calibrate_prints_the_noise_scales() {
    let text = ok(&["calibrate", "--n", "1000", "--d", "5"]);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let cal = &v["calibration"];
    assert!(cal["sigma_u2"].as_f64().unwrap() > cal["sigma_u_threshold"].as_f64().unwrap().powi(2));
    assert_eq!(cal["n"], 1000);
    assert!(v["local_dp"]["epsilon"].as_f64().unwrap() > 0.0);
    assert!(v["recommended_delta_cap"].as_f64().unwrap() > 2.0);
}

#[test]
fn calibrate_reports_too_small_n() {
    let out = run(&["calibrate", "--n", "10", "--d", "5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("27"));
}

#[test]
fn perturb_then_learn() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    let released = dir.path().join("released.csv");
    let model = dir.path().join("model.json");
    write_raw(&raw, 200);
    ok(&[
        "perturb",
        "--input",
        raw.to_str().unwrap(),
        "--target",
        "target",
        "--out",
        released.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    let header = std::fs::read_to_string(&released).unwrap();
    assert!(header.starts_with("q_0,q_1,q_2,p_0,p_1,p_2,s\n"));
    assert_eq!(header.lines().count(), 201);

    ok(&[
        "learn",
        "--input",
        released.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    let art: ModelArtifact = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(art.dim, 3);
    assert_eq!(art.w.len(), 3);
    assert_eq!(art.seed, Some(3));
    assert!(art.w.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1.0 + 1e-12);
}

#[test]
fn perturb_requires_unit_rows_without_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    write_raw(&raw, 50);
    let out = run(&[
        "perturb",
        "--input",
        raw.to_str().unwrap(),
        "--target",
        "target",
        "--no-scale",
    ]);
    assert!(!out.status.success());
}

#[test]
fn experiment_flags_override_defaults() {
    let text = ok(&[
        "experiment",
        "--mechanisms",
        "non_private",
        "--trials",
        "1",
        "--n-grid",
        "64,128",
    ]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.starts_with("non_private,")));
}

#[test]
fn experiment_with_no_mechanisms_prints_only_the_header() {
    let text = ok(&["experiment", "--mechanisms", "", "--trials", "1", "--n-grid", "64"]);
    assert_eq!(text, format!("{CSV_HEADER}\n"));
}

#[test]
fn experiment_rejects_unknown_config_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"trials": 2, "bogus": 1}"#).unwrap();
    let out = run(&["experiment", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn quick_verification_passes() {
    let text = ok(&["verify", "--quick", "--seed", "1"]);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(!v.as_array().unwrap().is_empty());
}
