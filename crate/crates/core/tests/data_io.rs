mod common;

use std::fs;
use std::path::Path;

use hpl::io::{
    load_dataset, load_labels, load_manifest, load_matrix, load_state, save_labels, save_matrix,
    save_state, DatasetManifest, MatrixFormat, MatrixRef,
};
use hpl::model::{alignment_cost, total_objective};
use hpl::synth::{synth_generate, SynthSpec};
use hpl::{HplError, HyperParams, Matrix, Mode, TruthSpace};
use tempfile::TempDir;

fn write_csv(dir: &Path, name: &str, m: &Matrix) {
    save_matrix(m, &dir.join(name), MatrixFormat::Csv).unwrap();
}

/// Two classes, three seen samples, one unseen class with two samples.
fn minimal(dir: &Path, labels: &[usize], normalize: bool) -> DatasetManifest {
    let x_s = Matrix::from_column_slice(2, 3, &[3.0, 4.0, 1.0, 0.0, 0.0, 2.0]);
    let y_s = Matrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let x_u = Matrix::from_column_slice(2, 2, &[0.6, 0.8, 0.8, 0.6]);
    let y_u = Matrix::from_column_slice(2, 1, &[0.6, 0.8]);
    write_csv(dir, "xs.csv", &x_s);
    write_csv(dir, "ys.csv", &y_s);
    write_csv(dir, "xu.csv", &x_u);
    write_csv(dir, "yu.csv", &y_u);
    save_labels(labels, &dir.join("ls.csv")).unwrap();
    DatasetManifest {
        x_s: MatrixRef::new("xs.csv", MatrixFormat::Csv),
        labels_s: "ls.csv".into(),
        y_s: MatrixRef::new("ys.csv", MatrixFormat::Csv),
        x_u: MatrixRef::new("xu.csv", MatrixFormat::Csv),
        y_u: MatrixRef::new("yu.csv", MatrixFormat::Csv),
        truth_u: None,
        truth_space: TruthSpace::Unseen,
        normalize,
        seen_class_names: None,
        unseen_class_names: None,
    }
}

#[test]
fn minimal_manifest_builds_onehot_labels() {
    let dir = TempDir::new().unwrap();
    let manifest = minimal(dir.path(), &[0, 1, 1], true);
    let (seen, unseen) = load_dataset(&manifest, dir.path()).unwrap();
    let c = seen.onehot().to_onehot();
    assert_eq!(c.shape(), (2, 3));
    for col in c.column_iter() {
        assert_eq!(col.sum(), 1.0);
    }
    assert_eq!(unseen.num_samples(), 2);
}

#[test]
fn normalization_flag_gives_unit_columns() {
    let dir = TempDir::new().unwrap();
    let manifest = minimal(dir.path(), &[0, 1, 1], true);
    let (seen, _) = load_dataset(&manifest, dir.path()).unwrap();
    for col in seen.features().column_iter() {
        assert!((col.norm() - 1.0).abs() < 1e-10);
    }
    let raw = minimal(dir.path(), &[0, 1, 1], false);
    assert!(matches!(
        load_dataset(&raw, dir.path()),
        Err(HplError::Validation(_))
    ));
}

#[test]
fn distinct_label_errors() {
    let dir = TempDir::new().unwrap();
    let out_of_range = minimal(dir.path(), &[0, 4, 1], true);
    let err = load_dataset(&out_of_range, dir.path())
        .unwrap_err()
        .to_string();
    assert!(err.contains("label out of range"), "{err}");

    let dir = TempDir::new().unwrap();
    let empty_class = minimal(dir.path(), &[0, 0, 0], true);
    let err = load_dataset(&empty_class, dir.path())
        .unwrap_err()
        .to_string();
    assert!(err.contains("zero samples"), "{err}");
}

#[test]
fn dimension_mismatch_is_reported() {
    let dir = TempDir::new().unwrap();
    let manifest = minimal(dir.path(), &[0, 1, 1], true);
    write_csv(dir.path(), "xu.csv", &Matrix::from_element(3, 2, 0.5));
    let err = load_dataset(&manifest, dir.path()).unwrap_err().to_string();
    assert!(err.contains("dimension mismatch"), "{err}");
}

#[test]
fn manifest_json_resolves_relative_paths() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    let manifest = minimal(&data, &[0, 1, 1], true);
    let path = data.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    let (loaded, base) = load_manifest(&path).unwrap();
    assert_eq!(loaded, manifest);
    assert!(load_dataset(&loaded, &base).is_ok());
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let err = load_matrix(&dir.path().join("absent.hplm"), MatrixFormat::HplmBinary).unwrap_err();
    assert!(matches!(err, HplError::Io { .. }));
}

#[test]
fn labels_are_one_based_on_disk() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("l.csv");
    save_labels(&[0, 2, 1], &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "1\n3\n2\n");
    assert_eq!(load_labels(&path).unwrap(), vec![0, 2, 1]);
    fs::write(&path, "1\n0\n").unwrap();
    assert!(load_labels(&path).is_err());
}

#[test]
fn state_round_trip() {
    let (_, _, state) = synth_generate(&SynthSpec::default()).unwrap();
    let dir = TempDir::new().unwrap();
    save_state(&state, dir.path()).unwrap();
    assert_eq!(load_state(dir.path()).unwrap(), state);
}

#[test]
fn hplm_file_round_trip_is_bitwise() {
    let dir = TempDir::new().unwrap();
    let m = Matrix::from_fn(4, 3, |i, j| {
        (i as f64 + 0.1).powf(j as f64 + 0.3) - 1.0 / 3.0
    });
    let path = dir.path().join("m.hplm");
    save_matrix(&m, &path, MatrixFormat::HplmBinary).unwrap();
    let back = load_matrix(&path, MatrixFormat::HplmBinary).unwrap();
    assert!(back
        .iter()
        .zip(m.iter())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let spec = SynthSpec::default();
    let (s1, u1, t1) = synth_generate(&spec).unwrap();
    let (s2, u2, t2) = synth_generate(&spec).unwrap();
    assert_eq!(s1.features(), s2.features());
    assert_eq!(u1.features(), u2.features());
    assert_eq!(t1, t2);
    let (s3, _, _) = synth_generate(&SynthSpec { seed: 8, ..spec }).unwrap();
    assert_ne!(s1.features(), s3.features());
}

#[test]
fn noiseless_full_rank_instance_has_zero_objective() {
    let spec = SynthSpec {
        d: 20,
        k: 15,
        q: 13,
        noise_sigma: 0.0,
        samples_per_class: 4,
        samples_per_unseen_class: 3,
        ..SynthSpec::default()
    };
    let (seen, unseen, truth) = synth_generate(&spec).unwrap();
    let hp = HyperParams {
        theta: Some(1.0),
        ..HyperParams::default()
    };
    assert!(total_objective(&truth, &seen, &unseen, &hp).unwrap() < 1e-10);
}

#[test]
fn noiseless_low_rank_instance_has_exact_alignment() {
    // With q < m + n the encoding term cannot vanish; the alignment term does.
    let spec = SynthSpec {
        noise_sigma: 0.0,
        ..SynthSpec::default()
    };
    let (seen, unseen, truth) = synth_generate(&spec).unwrap();
    let a_s = alignment_cost(
        &truth.p_s,
        seen.semantics(),
        &truth.d_v,
        &truth.d_c,
        &truth.z_s,
        1.0,
    );
    let a_u = alignment_cost(
        &truth.p_u,
        unseen.semantics(),
        &truth.d_v,
        &truth.d_c,
        &truth.z_u,
        1.0,
    );
    assert!(a_s.unwrap() < 1e-20 && a_u.unwrap() < 1e-20);
}

#[test]
fn gzsl_pool_uses_the_joint_label_space() {
    let spec = SynthSpec {
        seen_test_per_class: 2,
        samples_per_unseen_class: 3,
        ..SynthSpec::default()
    };
    let (_, unseen, truth) = synth_generate(&spec).unwrap();
    assert_eq!(unseen.truth_space(), TruthSpace::All);
    assert_eq!(unseen.num_samples(), 8 * 2 + 5 * 3);
    assert_eq!(truth.c_u.classes(), 13);
    let hp = HyperParams {
        mode: Mode::Gzsl,
        ..HyperParams::default()
    };
    assert!(hp.validate().is_ok());
}
