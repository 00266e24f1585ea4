//! Matrix files, label files, dataset manifests and model-state persistence.
//!
//! Two matrix formats are supported:
//!
//! - `hplm-binary`: magic `HPLM`, version byte `0x01`, `u32` LE rows, `u32` LE
//!   cols, then `rows·cols` LE `f64` values in column-major order.
//! - `csv`: one matrix row per line, comma separated, no header.
//!
//! Label files hold one 1-based class index per line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HplError, Result};
use crate::kernels::{first_non_finite, normalize_columns, Matrix};
use crate::model::{
    check_compatible, Assignment, LabeledFeatureSet, ModelState, TruthSpace, UnlabeledFeatureSet,
};

pub const HPLM_MAGIC: &[u8; 4] = b"HPLM";
pub const HPLM_VERSION: u8 = 0x01;
const HPLM_HEADER_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixFormat {
    #[serde(rename = "csv")]
    Csv,
    #[serde(rename = "hplm-binary")]
    HplmBinary,
}

impl MatrixFormat {
    /// `.csv` files are CSV, everything else is `hplm-binary`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::HplmBinary,
        }
    }
}

fn format_error(path: &Path, offset: usize, message: impl Into<String>) -> HplError {
    HplError::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn reject_non_finite(m: &Matrix, path: &Path) -> Result<()> {
    if let Some((r, c)) = first_non_finite(m) {
        return Err(HplError::validation(format!(
            "{}: non-finite entry {} at row {r}, col {c}",
            path.display(),
            m[(r, c)]
        )));
    }
    Ok(())
}

pub fn encode_hplm(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HPLM_HEADER_LEN + 8 * m.len());
    out.extend_from_slice(HPLM_MAGIC);
    out.push(HPLM_VERSION);
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes an `hplm-binary` buffer; `path` is only used in error messages.
pub fn decode_hplm(bytes: &[u8], path: &Path) -> Result<Matrix> {
    if bytes.len() < 4 || &bytes[..4] != HPLM_MAGIC {
        return Err(format_error(path, 0, "bad magic, expected \"HPLM\""));
    }
    match bytes.get(4) {
        Some(&HPLM_VERSION) => {}
        Some(v) => {
            return Err(format_error(
                path,
                4,
                format!("unsupported version {v:#04x}"),
            ))
        }
        None => return Err(format_error(path, 4, "truncated header")),
    }
    if bytes.len() < HPLM_HEADER_LEN {
        return Err(format_error(path, bytes.len(), "truncated header"));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HPLM_HEADER_LEN))
        .ok_or_else(|| format_error(path, 5, "dimensions overflow"))?;
    if bytes.len() < expected {
        return Err(format_error(
            path,
            bytes.len(),
            format!("truncated payload: {rows}x{cols} needs {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(format_error(path, expected, "trailing bytes after payload"));
    }
    let values: Vec<f64> = bytes[HPLM_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let m = Matrix::from_vec(rows, cols, values);
    reject_non_finite(&m, path)?;
    Ok(m)
}

pub fn encode_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|c| format!("{:.16e}", m[(r, c)]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn decode_csv(text: &str, path: &Path) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut offset = 0;
    for (line_no, line) in text.split_inclusive('\n').enumerate() {
        let content = line.trim_end_matches(['\n', '\r']);
        if content.trim().is_empty() {
            offset += line.len();
            continue;
        }
        let mut row = Vec::new();
        let mut field_offset = offset;
        for field in content.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                format_error(
                    path,
                    field_offset,
                    format!(
                        "line {}: cannot parse {:?} as a number",
                        line_no + 1,
                        field.trim()
                    ),
                )
            })?;
            row.push(v);
            field_offset += field.len() + 1;
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format_error(
                    path,
                    offset,
                    format!(
                        "line {} has {} fields, expected {}",
                        line_no + 1,
                        row.len(),
                        first.len()
                    ),
                ));
            }
        }
        rows.push(row);
        offset += line.len();
    }
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    let m = Matrix::from_fn(nrows, ncols, |r, c| rows[r][c]);
    reject_non_finite(&m, path)?;
    Ok(m)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        HplError::io(path, e)
    })
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<Matrix> {
    match format {
        MatrixFormat::HplmBinary => {
            let bytes = fs::read(path).map_err(|e| HplError::io(path, e))?;
            decode_hplm(&bytes, path)
        }
        MatrixFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| HplError::io(path, e))?;
            decode_csv(&text, path)
        }
    }
}

pub fn save_matrix(m: &Matrix, path: &Path, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::HplmBinary => write_atomic(path, &encode_hplm(m)),
        MatrixFormat::Csv => write_atomic(path, encode_csv(m).as_bytes()),
    }
}

/// Reads 1-based labels and returns them 0-based.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| HplError::io(path, e))?;
    let mut labels = Vec::new();
    let mut offset = 0;
    for (line_no, line) in text.split_inclusive('\n').enumerate() {
        let content = line.trim();
        if !content.is_empty() {
            let v: usize = content.parse().map_err(|_| {
                format_error(
                    path,
                    offset,
                    format!("line {}: {:?} is not a class index", line_no + 1, content),
                )
            })?;
            if v == 0 {
                return Err(HplError::validation(format!(
                    "{}: line {}: class indices start at 1",
                    path.display(),
                    line_no + 1
                )));
            }
            labels.push(v - 1);
        }
        offset += line.len();
    }
    Ok(labels)
}

/// Writes 0-based labels as 1-based, one per line.
pub fn save_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels {
        text.push_str(&(l + 1).to_string());
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRef {
    pub path: PathBuf,
    /// Inferred from the extension when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<MatrixFormat>,
}

impl MatrixRef {
    pub fn new(path: impl Into<PathBuf>, format: MatrixFormat) -> Self {
        Self {
            path: path.into(),
            format: Some(format),
        }
    }

    fn load(&self, base: &Path) -> Result<Matrix> {
        let path = base.join(&self.path);
        let format = self
            .format
            .unwrap_or_else(|| MatrixFormat::from_path(&path));
        load_matrix(&path, format)
    }
}

/// JSON description of a dataset. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub x_s: MatrixRef,
    pub labels_s: PathBuf,
    pub y_s: MatrixRef,
    pub x_u: MatrixRef,
    pub y_u: MatrixRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_u: Option<PathBuf>,
    #[serde(default)]
    pub truth_space: TruthSpace,
    /// Normalize feature and semantic columns to unit norm on load.
    #[serde(default)]
    pub normalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seen_class_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unseen_class_names: Option<Vec<String>>,
}

/// Reads a manifest and returns it with its base directory.
pub fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let text = fs::read_to_string(path).map_err(|e| HplError::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| HplError::validation(format!("{}: invalid manifest: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, base))
}

/// Loads and validates both halves of a dataset.
pub fn load_dataset(
    manifest: &DatasetManifest,
    base: &Path,
) -> Result<(LabeledFeatureSet, UnlabeledFeatureSet)> {
    let mut x_s = manifest.x_s.load(base)?;
    let mut y_s = manifest.y_s.load(base)?;
    let mut x_u = manifest.x_u.load(base)?;
    let mut y_u = manifest.y_u.load(base)?;
    let labels = load_labels(&base.join(&manifest.labels_s))?;
    let truth = manifest
        .truth_u
        .as_ref()
        .map(|p| load_labels(&base.join(p)))
        .transpose()?;

    if x_s.nrows() != x_u.nrows() {
        return Err(HplError::validation(format!(
            "dimension mismatch: X_s has d={}, X_u has d={}",
            x_s.nrows(),
            x_u.nrows()
        )));
    }
    if y_s.nrows() != y_u.nrows() {
        return Err(HplError::validation(format!(
            "dimension mismatch: Y_s has k={}, Y_u has k={}",
            y_s.nrows(),
            y_u.nrows()
        )));
    }
    if manifest.normalize {
        x_s = normalize_columns(&x_s)?;
        x_u = normalize_columns(&x_u)?;
        y_s = normalize_columns(&y_s)?;
        y_u = normalize_columns(&y_u)?;
    }
    let seen = LabeledFeatureSet::new(x_s, labels, y_s, manifest.seen_class_names.clone())?;
    let unseen = UnlabeledFeatureSet::new(
        x_u,
        y_u,
        truth,
        manifest.truth_space,
        manifest.unseen_class_names.clone(),
    )?;
    check_compatible(&seen, &unseen)?;
    Ok((seen, unseen))
}

const STATE_FILES: [&str; 6] = ["p_s", "p_u", "d_v", "d_c", "z_s", "z_u"];

/// Writes each state matrix as `<name>.hplm` and the assignment as `c_u.csv`
/// (1-based labels, preceded by a `# classes=<count>` line).
pub fn save_state(state: &ModelState, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HplError::io(dir, e))?;
    let mats = [
        &state.p_s, &state.p_u, &state.d_v, &state.d_c, &state.z_s, &state.z_u,
    ];
    for (name, m) in STATE_FILES.iter().zip(mats) {
        save_matrix(
            m,
            &dir.join(format!("{name}.hplm")),
            MatrixFormat::HplmBinary,
        )?;
    }
    let mut text = format!("# classes={}\n", state.c_u.classes());
    for l in state.c_u.labels() {
        text.push_str(&(l + 1).to_string());
        text.push('\n');
    }
    write_atomic(&dir.join("c_u.csv"), text.as_bytes())
}

pub fn load_state(dir: &Path) -> Result<ModelState> {
    let mut mats = Vec::with_capacity(STATE_FILES.len());
    for name in STATE_FILES {
        mats.push(load_matrix(
            &dir.join(format!("{name}.hplm")),
            MatrixFormat::HplmBinary,
        )?);
    }
    let path = dir.join("c_u.csv");
    let text = fs::read_to_string(&path).map_err(|e| HplError::io(&path, e))?;
    let mut lines = text.lines();
    let classes: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("# classes="))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| format_error(&path, 0, "missing \"# classes=<count>\" header"))?;
    let mut labels = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let v: usize = line
            .trim()
            .parse()
            .map_err(|_| HplError::validation(format!("{}: bad label {line:?}", path.display())))?;
        if v == 0 {
            return Err(HplError::validation(format!(
                "{}: class indices start at 1",
                path.display()
            )));
        }
        labels.push(v - 1);
    }
    let [p_s, p_u, d_v, d_c, z_s, z_u]: [Matrix; 6] = mats.try_into().expect("six matrices");
    let state = ModelState {
        p_s,
        p_u,
        d_v,
        d_c,
        z_s,
        z_u,
        c_u: Assignment::new(labels, classes)?,
    };
    state.check_feasible()?;
    Ok(state)
}
