use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use hpl::eval::{evaluate_gzsl, evaluate_zsl, EvalReport};
use hpl::io::{
    load_dataset, load_labels, load_manifest, save_labels, save_matrix, save_state, write_atomic,
    DatasetManifest, MatrixFormat, MatrixRef,
};
use hpl::synth::{synth_generate, SynthSpec};
use hpl::{
    fit as fit_model, FitHistory, HyperParams, LabeledFeatureSet, Mode, TruthSpace,
    UnlabeledFeatureSet,
};
use log::info;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::{self, take_path, take_usize};
use crate::error::CliError;
use crate::EvalMode;

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn load(manifest: &Path) -> Result<(LabeledFeatureSet, UnlabeledFeatureSet), CliError> {
    let (manifest, base) = load_manifest(manifest)?;
    Ok(load_dataset(&manifest, &base)?)
}

/// Scores predicted labels against the manifest truth, if any.
fn score(
    labels: &[usize],
    seen: &LabeledFeatureSet,
    unseen: &UnlabeledFeatureSet,
    mode: Mode,
) -> Result<Option<EvalReport>, CliError> {
    let Some(truth) = unseen.truth() else {
        return Ok(None);
    };
    let (m, n) = (seen.num_classes(), unseen.num_classes());
    let report = match (mode, unseen.truth_space()) {
        (Mode::Gzsl, TruthSpace::All) => evaluate_gzsl(labels, truth, m, n)?,
        (Mode::Gzsl, TruthSpace::Unseen) => {
            let shifted: Vec<usize> = truth.iter().map(|t| t + m).collect();
            evaluate_zsl(labels, &shifted)?
        }
        (_, TruthSpace::Unseen) => evaluate_zsl(labels, truth)?,
        (_, TruthSpace::All) => {
            return Err(CliError::validation(
                "truth labels cover seen classes; use mode gzsl",
            ))
        }
    };
    Ok(Some(report))
}

fn report_json(r: &EvalReport) -> Value {
    json!({
        "acc_unseen": r.acc_unseen,
        "acc_seen": r.acc_seen,
        "harmonic_mean": r.harmonic_mean,
    })
}

fn history_csv(h: &FitHistory) -> String {
    let mut out = String::from("iteration,objective,err1,err2\n");
    for i in 0..h.outer_iterations {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e}",
            i + 1,
            h.objective_per_outer[i],
            h.err1_per_outer[i],
            h.err2_per_outer[i]
        )
        .unwrap();
    }
    out
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn fit(config_path: Option<&Path>, overrides: &[String]) -> Result<(), CliError> {
    let mut map = config::load(config_path, overrides)?;
    let echo = Value::Object(map.clone());
    let manifest = take_path(&mut map, "manifest")?;
    let output = take_path(&mut map, "output")?;
    let repeats = take_usize(&mut map, "repeats", 1)?;
    if repeats == 0 {
        return Err(CliError::validation("repeats must be at least 1"));
    }
    let hp = config::hyperparams(map)?;
    let (seen, unseen) = load(&manifest)?;
    create_dir(&output)?;

    let start = Instant::now();
    let runs: Vec<Result<Value, CliError>> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let hp = HyperParams {
                seed: hp.seed + r as u64,
                ..hp.clone()
            };
            let t0 = Instant::now();
            let (state, history) = fit_model(&seen, &unseen, &hp)?;
            let seconds = t0.elapsed().as_secs_f64();
            info!(
                "repeat {r}: {} outer iterations, converged {}, objective {:.6e}",
                history.outer_iterations, history.converged, history.final_objective
            );
            let dir = output.join(format!("repeat_{r}"));
            save_state(&state, &dir.join("state"))?;
            save_labels(state.c_u.labels(), &dir.join("predictions.csv"))?;
            write_atomic(&dir.join("history.csv"), history_csv(&history).as_bytes())?;
            let eval = score(state.c_u.labels(), &seen, &unseen, hp.mode)?;
            Ok(json!({
                "repeat": r,
                "seed": hp.seed,
                "converged": history.converged,
                "outer_iterations": history.outer_iterations,
                "final_objective": history.final_objective,
                "wall_clock_seconds": seconds,
                "evaluation": eval.as_ref().map(report_json),
            }))
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let field = |k: &str| {
        mean(
            runs.iter()
                .map(|r| r["evaluation"].get(k).and_then(Value::as_f64)),
        )
    };
    let evaluation = runs[0]["evaluation"].is_object().then(|| {
        json!({
            "acc_unseen": field("acc_unseen"),
            "acc_seen": field("acc_seen"),
            "harmonic_mean": field("harmonic_mean"),
        })
    });
    let summary = json!({
        "config": echo,
        "hyperparams": hp,
        "wall_clock_seconds": start.elapsed().as_secs_f64(),
        "converged": runs.iter().all(|r| r["converged"] == Value::Bool(true)),
        "evaluation": evaluation,
        "repeats": runs,
    });
    write_json(&output.join("summary.json"), &summary)?;
    if let Some(e) = summary["evaluation"].as_object() {
        info!("mean evaluation: {}", Value::Object(e.clone()));
    }
    Ok(())
}

pub fn eval(
    predictions: &Path,
    truth: &Path,
    mode: EvalMode,
    m: Option<usize>,
    n: Option<usize>,
) -> Result<(), CliError> {
    let labels = load_labels(predictions)?;
    let truth = load_labels(truth)?;
    if labels.len() != truth.len() {
        return Err(CliError::validation(format!(
            "length mismatch: {} predictions for {} truth labels",
            labels.len(),
            truth.len()
        )));
    }
    let report = match mode {
        EvalMode::Zsl => evaluate_zsl(&labels, &truth)?,
        EvalMode::Gzsl => {
            let (Some(m), Some(n)) = (m, n) else {
                return Err(CliError::validation("gzsl evaluation needs --m and --n"));
            };
            evaluate_gzsl(&labels, &truth, m, n)?
        }
    };
    let per_class: Vec<Value> = report
        .per_class
        .iter()
        .map(|(c, e)| {
            json!({"class": c + 1, "correct": e.correct, "total": e.total, "accuracy": e.accuracy})
        })
        .collect();
    let mut out = report_json(&report);
    out["mode"] = json!(match mode {
        EvalMode::Zsl => "zsl",
        EvalMode::Gzsl => "gzsl",
    });
    out["per_class"] = Value::Array(per_class);
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("JSON values serialize")
    );
    Ok(())
}

pub fn synth(
    spec_path: Option<&Path>,
    output: &Path,
    overrides: &[String],
) -> Result<(), CliError> {
    let map = config::load(spec_path, overrides)?;
    let spec: SynthSpec = serde_json::from_value(Value::Object(map))
        .map_err(|e| CliError::validation(format!("invalid synth spec: {e}")))?;
    let (seen, unseen, truth) = synth_generate(&spec)?;
    create_dir(output)?;

    let hplm = MatrixFormat::HplmBinary;
    save_matrix(seen.features(), &output.join("x_s.hplm"), hplm)?;
    save_matrix(seen.semantics(), &output.join("y_s.hplm"), hplm)?;
    save_matrix(unseen.features(), &output.join("x_u.hplm"), hplm)?;
    save_matrix(unseen.semantics(), &output.join("y_u.hplm"), hplm)?;
    save_labels(seen.labels(), &output.join("labels_s.csv"))?;
    save_labels(
        unseen.truth().expect("synthetic data has truth"),
        &output.join("truth_u.csv"),
    )?;
    save_state(&truth, &output.join("truth_state"))?;

    let manifest = DatasetManifest {
        x_s: MatrixRef::new("x_s.hplm", hplm),
        labels_s: "labels_s.csv".into(),
        y_s: MatrixRef::new("y_s.hplm", hplm),
        x_u: MatrixRef::new("x_u.hplm", hplm),
        y_u: MatrixRef::new("y_u.hplm", hplm),
        truth_u: Some("truth_u.csv".into()),
        truth_space: unseen.truth_space(),
        normalize: false,
        seen_class_names: None,
        unseen_class_names: None,
    };
    let manifest_path = output.join("manifest.json");
    write_json(
        &manifest_path,
        &serde_json::to_value(&manifest).expect("manifest serializes"),
    )?;
    write_json(
        &output.join("spec.json"),
        &serde_json::to_value(spec).expect("spec serializes"),
    )?;
    info!(
        "wrote {} seen and {} unseen samples to {}",
        seen.num_samples(),
        unseen.num_samples(),
        output.display()
    );
    println!("{}", json!({ "manifest": manifest_path }));
    Ok(())
}

const GRID_KEYS: [&str; 4] = ["rho", "omega", "alpha", "theta"];

fn grid_values(grid: &Map<String, Value>, key: &str) -> Result<Option<Vec<Value>>, CliError> {
    match grid.get(key) {
        None => Ok(None),
        Some(Value::Array(v)) if !v.is_empty() => Ok(Some(v.clone())),
        Some(Value::Array(_)) => Err(CliError::validation(format!("grid.{key} is empty"))),
        Some(v) => Ok(Some(vec![v.clone()])),
    }
}

pub fn grid(config_path: Option<&Path>, overrides: &[String]) -> Result<(), CliError> {
    let mut map = config::load(config_path, overrides)?;
    let manifest = take_path(&mut map, "manifest")?;
    let output = take_path(&mut map, "output")?;
    let grid = match map.remove("grid") {
        Some(Value::Object(g)) => g,
        None => Map::new(),
        Some(other) => {
            return Err(CliError::validation(format!(
                "grid must be an object, got {other}"
            )))
        }
    };
    if let Some(k) = grid.keys().find(|k| !GRID_KEYS.contains(&k.as_str())) {
        return Err(CliError::validation(format!("unknown grid key {k}")));
    }
    let base = config::hyperparams(map.clone())?;

    let mut points = vec![map];
    for key in GRID_KEYS {
        if let Some(values) = grid_values(&grid, key)? {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut p = p.clone();
                        p.insert(key.into(), v.clone());
                        p
                    })
                })
                .collect();
        }
    }
    let points = points
        .into_iter()
        .map(config::hyperparams)
        .collect::<Result<Vec<_>, _>>()?;

    let (seen, unseen) = load(&manifest)?;
    if unseen.truth().is_none() {
        return Err(CliError::validation(
            "grid search needs truth labels in the validation manifest",
        ));
    }
    let (m, n) = (seen.num_classes(), unseen.num_classes());
    info!("grid: {} points on {}", points.len(), manifest.display());

    let scored: Vec<Result<(HyperParams, f64), CliError>> = points
        .into_par_iter()
        .map(|hp| {
            let (state, _) = fit_model(&seen, &unseen, &hp)?;
            let r = score(state.c_u.labels(), &seen, &unseen, hp.mode)?.expect("truth checked");
            let acc = r.harmonic_mean.unwrap_or(r.acc_unseen);
            Ok((hp, acc))
        })
        .collect();
    let mut rows = scored.into_iter().collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| b.1.total_cmp(&a.1));

    let theta = |hp: &HyperParams| hp.theta.unwrap_or(m as f64 / (m + n) as f64);
    let mut csv = String::from("rho,omega,alpha,theta,acc\n");
    for (hp, acc) in &rows {
        writeln!(
            csv,
            "{},{},{},{},{}",
            hp.rho,
            hp.omega,
            hp.alpha,
            theta(hp),
            acc
        )
        .unwrap();
    }
    create_dir(&output)?;
    write_atomic(&output.join("grid.csv"), csv.as_bytes())?;

    let (best, acc) = &rows[0];
    let row = json!({
        "rho": best.rho,
        "omega": best.omega,
        "alpha": best.alpha,
        "theta": theta(best),
        "acc": acc,
        "mode": base.mode,
    });
    println!("{row}");
    Ok(())
}
