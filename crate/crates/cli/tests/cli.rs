use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hpl::io::{load_dataset, load_manifest};
use serde_json::Value;
use tempfile::TempDir;

/// Super-prototype fraction matching the synthetic generator (q = 6 of 13 classes).
const MATCHED_THETA: &str = "0.46153846153846156";

fn hpl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hpl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hpl(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("data");
    let mut args = vec!["synth", "--output", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out.join("manifest.json")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("wall_clock_seconds");
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn write_labels(path: &Path, labels: &[usize]) {
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    fs::write(path, text).unwrap();
}

#[test]
fn synth_output_loads_back() {
    let dir = TempDir::new().unwrap();
    let manifest = synth(dir.path(), &[]);
    let (m, base) = load_manifest(&manifest).unwrap();
    let (seen, unseen) = load_dataset(&m, &base).unwrap();
    assert_eq!(seen.num_classes(), 8);
    assert_eq!(unseen.num_classes(), 5);
    assert_eq!(unseen.truth().unwrap().len(), unseen.num_samples());
    assert!(dir.path().join("data/truth_state/d_v.hplm").exists());
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    synth(a.path(), &["--seed", "11"]);
    synth(b.path(), &["--seed", "11"]);
    let mut names: Vec<_> = fs::read_dir(a.path().join("data"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n != "truth_state")
        .collect();
    names.sort();
    assert!(names.len() >= 8);
    for name in names {
        let x = fs::read(a.path().join("data").join(&name)).unwrap();
        let y = fs::read(b.path().join("data").join(&name)).unwrap();
        assert_eq!(x, y, "{name:?}");
    }
}

#[test]
fn impossible_separation_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = hpl(&[
        "synth",
        "--output",
        s(dir.path()),
        "--d",
        "2",
        "--m",
        "40",
        "--n",
        "10",
        "--separation",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("increase d"), "{err}");
}

#[test]
fn fit_recovers_synthetic_classes() {
    let dir = TempDir::new().unwrap();
    let manifest = synth(dir.path(), &[]);
    let run = dir.path().join("run");
    ok(&[
        "fit",
        "--manifest",
        s(&manifest),
        "--output",
        s(&run),
        "--theta",
        MATCHED_THETA,
    ]);
    let summary = read_json(&run.join("summary.json"));
    let acc = summary["evaluation"]["acc_unseen"].as_f64().unwrap();
    assert!(acc >= 0.95, "{acc}");
    assert_eq!(summary["converged"], Value::Bool(true));

    let predictions = fs::read_to_string(run.join("repeat_0/predictions.csv")).unwrap();
    assert_eq!(predictions.lines().count(), 250);
    let history = fs::read_to_string(run.join("repeat_0/history.csv")).unwrap();
    assert_eq!(
        history.lines().next(),
        Some("iteration,objective,err1,err2")
    );
    assert_eq!(
        history.lines().count() - 1,
        summary["repeats"][0]["outer_iterations"].as_u64().unwrap() as usize
    );
    for name in ["p_s", "p_u", "d_v", "d_c", "z_s", "z_u"] {
        assert!(run.join(format!("repeat_0/state/{name}.hplm")).exists());
    }
}

#[test]
fn repeated_runs_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let manifest = synth(
        dir.path(),
        &[
            "--samples_per_class",
            "15",
            "--samples_per_unseen_class",
            "15",
        ],
    );
    let config = dir.path().join("fit.json");
    fs::write(
        &config,
        r#"{"manifest": "data/manifest.json", "output": "run", "repeats": 2, "seed": 5}"#,
    )
    .unwrap();
    assert!(manifest.exists());
    ok(&["fit", "--config", s(&config)]);
    let mut first = read_json(&dir.path().join("run/summary.json"));
    let p1 = fs::read(dir.path().join("run/repeat_1/predictions.csv")).unwrap();
    ok(&["fit", "--config", s(&config)]);
    let mut second = read_json(&dir.path().join("run/summary.json"));
    let p2 = fs::read(dir.path().join("run/repeat_1/predictions.csv")).unwrap();
    assert_eq!(first["repeats"][0]["seed"], 5);
    assert_eq!(first["repeats"][1]["seed"], 6);
    strip_timing(&mut first);
    strip_timing(&mut second);
    assert_eq!(first, second);
    assert_eq!(p1, p2);
}

#[test]
fn invalid_rho_exits_1_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("fit.json");
    fs::write(
        &config,
        r#"{"manifest": "m.json", "output": "run", "rho": 1.2}"#,
    )
    .unwrap();
    let out = hpl(&["fit", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho"));

    let out = hpl(&[
        "fit",
        "--config",
        s(&config),
        "--rho",
        "0.5",
        "--rhoo",
        "0.1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rhoo"));
}

#[test]
fn missing_manifest_exits_3() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("absent.json");
    let out = hpl(&["fit", "--manifest", s(&missing), "--output", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(hpl(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hpl(&["--help"]).status.code(), Some(0));
}

#[test]
fn eval_fixtures() {
    let dir = TempDir::new().unwrap();
    let (p, t) = (dir.path().join("p.csv"), dir.path().join("t.csv"));

    write_labels(&t, &[1, 2, 2, 3]);
    let v: Value =
        serde_json::from_str(&ok(&["eval", "--predictions", s(&t), "--truth", s(&t)])).unwrap();
    assert_eq!(v["acc_unseen"], 1.0);

    write_labels(&t, &[1, 1, 1, 1, 2]);
    write_labels(&p, &[1, 2, 1, 2, 2]);
    let v: Value =
        serde_json::from_str(&ok(&["eval", "--predictions", s(&p), "--truth", s(&t)])).unwrap();
    assert_eq!(v["acc_unseen"], 0.75);
    assert_eq!(v["per_class"][0]["class"], 1);
    assert_eq!(v["per_class"][0]["correct"], 2);

    write_labels(&t, &[1, 1, 2, 2, 3, 3]);
    write_labels(&p, &[1, 2, 1, 2, 3, 3]);
    let v: Value = serde_json::from_str(&ok(&[
        "eval",
        "--predictions",
        s(&p),
        "--truth",
        s(&t),
        "--mode",
        "gzsl",
        "--m",
        "2",
        "--n",
        "1",
    ]))
    .unwrap();
    assert_eq!(v["acc_seen"], 0.5);
    assert_eq!(v["acc_unseen"], 1.0);
    assert!((v["harmonic_mean"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-15);

    write_labels(&p, &[1, 2]);
    let out = hpl(&["eval", "--predictions", s(&p), "--truth", s(&t)]);
    assert_eq!(out.status.code(), Some(1));
}

fn grid_rows(path: &Path) -> Vec<Vec<f64>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("rho,omega,alpha,theta,acc"));
    lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn grid_over_rho_writes_sorted_rows() {
    let dir = TempDir::new().unwrap();
    let manifest = synth(
        dir.path(),
        &[
            "--samples_per_class",
            "15",
            "--samples_per_unseen_class",
            "15",
        ],
    );
    let config = dir.path().join("grid.json");
    fs::write(&config, r#"{"grid": {"rho": [0.4, 0.6]}}"#).unwrap();
    let out = dir.path().join("grid");
    let best: Value = serde_json::from_str(&ok(&[
        "grid",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--output",
        s(&out),
    ]))
    .unwrap();
    let rows = grid_rows(&out.join("grid.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows[0][4] >= rows[1][4]);
    assert_eq!(best["rho"], rows[0][0]);
    assert_eq!(best["acc"], rows[0][4]);
    let mut rhos: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    rhos.sort_by(f64::total_cmp);
    assert_eq!(rhos, [0.4, 0.6]);
}

#[test]
fn singleton_grid_matches_fit() {
    let dir = TempDir::new().unwrap();
    let manifest = synth(
        dir.path(),
        &[
            "--samples_per_class",
            "15",
            "--samples_per_unseen_class",
            "15",
        ],
    );
    let out = dir.path().join("grid");
    ok(&[
        "grid",
        "--manifest",
        s(&manifest),
        "--output",
        s(&out),
        "--rho",
        "0.5",
    ]);
    let rows = grid_rows(&out.join("grid.csv"));
    assert_eq!(rows.len(), 1);
    let run = dir.path().join("run");
    ok(&[
        "fit",
        "--manifest",
        s(&manifest),
        "--output",
        s(&run),
        "--rho",
        "0.5",
    ]);
    let summary = read_json(&run.join("summary.json"));
    assert_eq!(
        summary["evaluation"]["acc_unseen"].as_f64().unwrap(),
        rows[0][4]
    );
    assert!((rows[0][3] - 8.0 / 13.0).abs() < 1e-15);
}

/// Ties are common (every θ up to 0.6 often reaches accuracy 1), so the check
/// is that some top-scoring grid point lies within 0.2 of m/(m+n).
#[test]
fn best_theta_is_near_the_seen_fraction() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("grid.json");
    fs::write(&config, r#"{"grid": {"theta": [0.2, 0.4, 0.6, 0.8, 1.0]}}"#).unwrap();
    let target = 8.0 / 13.0;
    let mut hits = 0;
    for seed in 0..10 {
        let sub = dir.path().join(format!("s{seed}"));
        let manifest = synth(&sub, &["--seed", &seed.to_string()]);
        let out = sub.join("grid");
        ok(&[
            "grid",
            "--config",
            s(&config),
            "--manifest",
            s(&manifest),
            "--output",
            s(&out),
        ]);
        let rows = grid_rows(&out.join("grid.csv"));
        let top = rows[0][4];
        if rows
            .iter()
            .filter(|r| r[4] == top)
            .any(|r| (r[3] - target).abs() <= 0.2)
        {
            hits += 1;
        }
    }
    assert!(hits >= 7, "{hits}/10 seeds");
}
