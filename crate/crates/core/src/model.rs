//! Datasets, hyperparameters, model state and the cost terms of the objective.
//!
//! The objective minimized by [`crate::solver::fit`] is
//!
//! ```text
//! β·Φ_enc,s(P_s) + Φ_alig,s(P_s, D_v, D_c, Z_s) + γ·(β·Φ_enc,u(P_u, C_u) + Φ_alig,u(P_u, Z_u))
//! ```
//!
//! with `Φ_enc(P, C) = ‖PᵀX − C‖²_F + ‖X − PC‖²_F` and
//! `Φ_alig(P, Z) = ‖P − D_v Z‖²_F + λ‖Y − D_c Z‖²_F`, subject to unit-ball
//! columns in `D_v` and `D_c`.

use serde::{Deserialize, Serialize};

use crate::error::{HplError, Result};
use crate::kernels::{ensure_finite, LineSearch, Matrix};

const UNIT_NORM_TOL: f64 = 1e-10;
pub(crate) const FEASIBILITY_TOL: f64 = 1e-10;

/// One-hot assignment matrix stored as a label per column.
///
/// Labels are 0-based class indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    labels: Vec<usize>,
    classes: usize,
}

impl Assignment {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(HplError::validation(format!(
                "label out of range: sample {i} has class {} but only {classes} classes exist",
                l + 1
            )));
        }
        Ok(Self { labels, classes })
    }

    /// Reads a dense one-hot matrix (`classes × samples`).
    pub fn from_onehot(c: &Matrix) -> Result<Self> {
        let mut labels = Vec::with_capacity(c.ncols());
        for (i, col) in c.column_iter().enumerate() {
            let mut hit = None;
            for (j, &v) in col.iter().enumerate() {
                if v == 1.0 && hit.is_none() {
                    hit = Some(j);
                } else if v != 0.0 {
                    return Err(HplError::validation(format!("column {i} is not one-hot")));
                }
            }
            labels.push(
                hit.ok_or_else(|| HplError::validation(format!("column {i} is not one-hot")))?,
            );
        }
        Ok(Self {
            labels,
            classes: c.nrows(),
        })
    }

    pub fn to_onehot(&self) -> Matrix {
        let mut c = Matrix::zeros(self.classes, self.labels.len());
        for (i, &l) in self.labels.iter().enumerate() {
            c[(l, i)] = 1.0;
        }
        c
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<usize> {
        self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Diagonal of `C Cᵀ`.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// `X Cᵀ`: the per-class column sums of `x`.
    pub fn class_sums(&self, x: &Matrix) -> Matrix {
        let mut sums = Matrix::zeros(x.nrows(), self.classes);
        for (i, &l) in self.labels.iter().enumerate() {
            let mut dst = sums.column_mut(l);
            dst += x.column(i);
        }
        sums
    }

    /// `P C`: the prototype of each sample's class, one column per sample.
    pub fn expand(&self, p: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(p.nrows(), self.labels.len());
        for (i, &l) in self.labels.iter().enumerate() {
            out.set_column(i, &p.column(l));
        }
        out
    }
}

fn check_unit_columns(x: &Matrix, what: &str) -> Result<()> {
    for (j, col) in x.column_iter().enumerate() {
        let norm = col.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(HplError::validation(format!(
                "{what} column {j} has norm {norm:.12}, expected unit norm"
            )));
        }
    }
    Ok(())
}

/// Seen-class training data: features `X_s` (d×N_s), labels, and semantics `Y_s` (k×m).
#[derive(Debug, Clone)]
pub struct LabeledFeatureSet {
    features: Matrix,
    onehot: Assignment,
    semantics: Matrix,
    class_names: Option<Vec<String>>,
}

impl LabeledFeatureSet {
    /// `labels` are 0-based; the class count is the number of semantic columns.
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        semantics: Matrix,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        ensure_finite(&features, "seen features")?;
        ensure_finite(&semantics, "seen semantics")?;
        let m = semantics.ncols();
        if m == 0 {
            return Err(HplError::validation("seen semantics has no classes"));
        }
        if labels.len() != features.ncols() {
            return Err(HplError::validation(format!(
                "dimension mismatch: {} seen labels for {} seen samples",
                labels.len(),
                features.ncols()
            )));
        }
        check_unit_columns(&features, "seen features")?;
        let onehot = Assignment::new(labels, m)?;
        if let Some(c) = onehot.counts().iter().position(|&n| n == 0) {
            return Err(HplError::validation(format!(
                "seen class {} has zero samples",
                c + 1
            )));
        }
        if let Some(names) = &class_names {
            if names.len() != m {
                return Err(HplError::validation(format!(
                    "dimension mismatch: {} seen class names for {m} classes",
                    names.len()
                )));
            }
        }
        Ok(Self {
            features,
            onehot,
            semantics,
            class_names,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn onehot(&self) -> &Assignment {
        &self.onehot
    }

    pub fn labels(&self) -> &[usize] {
        self.onehot.labels()
    }

    pub fn semantics(&self) -> &Matrix {
        &self.semantics
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.semantics.ncols()
    }

    pub fn num_samples(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn semantic_dim(&self) -> usize {
        self.semantics.nrows()
    }
}

/// Label space of held-out truth for the unlabelled set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TruthSpace {
    /// Indices refer to the `n` unseen classes.
    #[default]
    Unseen,
    /// Indices refer to all `m + n` classes, seen first.
    All,
}

/// Unlabelled test data: features `X_u` (d×N_u), unseen semantics `Y_u` (k×n),
/// and optional ground truth kept for evaluation only.
#[derive(Debug, Clone)]
pub struct UnlabeledFeatureSet {
    features: Matrix,
    semantics: Matrix,
    truth: Option<Vec<usize>>,
    truth_space: TruthSpace,
    class_names: Option<Vec<String>>,
}

impl UnlabeledFeatureSet {
    pub fn new(
        features: Matrix,
        semantics: Matrix,
        truth: Option<Vec<usize>>,
        truth_space: TruthSpace,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        ensure_finite(&features, "unseen features")?;
        ensure_finite(&semantics, "unseen semantics")?;
        if semantics.ncols() == 0 {
            return Err(HplError::validation("unseen semantics has no classes"));
        }
        check_unit_columns(&features, "unseen features")?;
        if let Some(t) = &truth {
            if t.len() != features.ncols() {
                return Err(HplError::validation(format!(
                    "dimension mismatch: {} truth labels for {} unseen samples",
                    t.len(),
                    features.ncols()
                )));
            }
            if truth_space == TruthSpace::Unseen {
                Assignment::new(t.clone(), semantics.ncols())?;
            }
        }
        if let Some(names) = &class_names {
            if names.len() != semantics.ncols() {
                return Err(HplError::validation(format!(
                    "dimension mismatch: {} unseen class names for {} classes",
                    names.len(),
                    semantics.ncols()
                )));
            }
        }
        Ok(Self {
            features,
            semantics,
            truth,
            truth_space,
            class_names,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn semantics(&self) -> &Matrix {
        &self.semantics
    }

    pub fn truth(&self) -> Option<&[usize]> {
        self.truth.as_deref()
    }

    pub fn truth_space(&self) -> TruthSpace {
        self.truth_space
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.semantics.ncols()
    }

    pub fn num_samples(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn semantic_dim(&self) -> usize {
        self.semantics.nrows()
    }
}

/// Checks that a seen/unseen pair shares dimensions and that truth indices fit.
pub fn check_compatible(seen: &LabeledFeatureSet, unseen: &UnlabeledFeatureSet) -> Result<()> {
    if seen.feature_dim() != unseen.feature_dim() {
        return Err(HplError::validation(format!(
            "dimension mismatch: seen features have d={}, unseen features have d={}",
            seen.feature_dim(),
            unseen.feature_dim()
        )));
    }
    if seen.semantic_dim() != unseen.semantic_dim() {
        return Err(HplError::validation(format!(
            "dimension mismatch: seen semantics have k={}, unseen semantics have k={}",
            seen.semantic_dim(),
            unseen.semantic_dim()
        )));
    }
    if let (Some(t), TruthSpace::All) = (unseen.truth(), unseen.truth_space()) {
        Assignment::new(t.to_vec(), seen.num_classes() + unseen.num_classes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Transductive,
    Inductive,
    Gzsl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    #[default]
    ClassMean,
    Kmeans,
    Sample,
}

/// Hyperparameters in the bounded `(ρ, ω, α, θ)` parameterization.
///
/// The solver works with `β = ρ/(1−ρ)`, `λ = ω/(1−ω)`, `γ = α/(1−α)` and
/// `q = max(1, round(θ·(m+n)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub rho: f64,
    pub omega: f64,
    pub alpha: f64,
    /// Fraction of super-prototypes per class; `None` uses `m/(m+n)`.
    pub theta: Option<f64>,
    pub mode: Mode,
    pub epsilon: f64,
    pub max_outer: usize,
    pub max_inner_unseen: usize,
    pub max_inner_seen: usize,
    /// Ridge added to Gram systems; `None` uses `1e-8·trace(G)/q`.
    pub ridge_tau: Option<f64>,
    pub init_strategy: InitKind,
    pub kmeans_restarts: usize,
    pub seed: u64,
    pub line_search: LineSearch,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            rho: 0.6,
            omega: 0.5,
            alpha: 0.6,
            theta: None,
            mode: Mode::Transductive,
            epsilon: 1e-4,
            max_outer: 100,
            max_inner_unseen: 50,
            max_inner_seen: 50,
            ridge_tau: None,
            init_strategy: InitKind::ClassMean,
            kmeans_restarts: 5,
            seed: 0,
            line_search: LineSearch::default(),
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if !(0.0..1.0).contains(&v) {
        return Err(HplError::validation(format!(
            "{name} must lie in [0, 1), got {v}"
        )));
    }
    Ok(())
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        unit_interval("rho", self.rho)?;
        unit_interval("omega", self.omega)?;
        unit_interval("alpha", self.alpha)?;
        if let Some(theta) = self.theta {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(HplError::validation(format!(
                    "theta must lie in (0, 1], got {theta}"
                )));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(HplError::validation(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if let Some(tau) = self.ridge_tau {
            if !(tau >= 0.0 && tau.is_finite()) {
                return Err(HplError::validation(format!(
                    "ridge_tau must be nonnegative, got {tau}"
                )));
            }
        }
        if self.init_strategy == InitKind::Kmeans && self.kmeans_restarts == 0 {
            return Err(HplError::validation(
                "kmeans_restarts must be at least 1 for the kmeans strategy",
            ));
        }
        self.line_search.validate()
    }

    pub fn beta(&self) -> f64 {
        self.rho / (1.0 - self.rho)
    }

    pub fn lambda(&self) -> f64 {
        self.omega / (1.0 - self.omega)
    }

    pub fn gamma(&self) -> f64 {
        self.alpha / (1.0 - self.alpha)
    }

    /// Number of super-prototypes for `m` seen and `n` unseen classes.
    pub fn num_super_prototypes(&self, m: usize, n: usize) -> usize {
        let total = m + n;
        let theta = self.theta.unwrap_or(m as f64 / total as f64);
        ((theta * total as f64).round() as usize).clamp(1, total.max(1))
    }

    /// Ridge for a Gram system: the configured value, or `1e-8·trace(G)/q`
    /// floored at `1e-12` so that a zero Gram matrix stays solvable.
    pub fn ridge_for(&self, gram: &Matrix) -> f64 {
        match self.ridge_tau {
            Some(tau) => tau,
            None => {
                let q = gram.nrows().max(1) as f64;
                (1e-8 * gram.trace() / q).max(1e-12)
            }
        }
    }

    pub fn init(&self) -> InitStrategy {
        InitStrategy {
            kind: self.init_strategy,
            kmeans_restarts: self.kmeans_restarts.max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitStrategy {
    pub kind: InitKind,
    pub kmeans_restarts: usize,
}

/// Every learned quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub p_s: Matrix,
    pub p_u: Matrix,
    pub d_v: Matrix,
    pub d_c: Matrix,
    pub z_s: Matrix,
    pub z_u: Matrix,
    /// `n` classes, or `m + n` (seen first) in GZSL mode.
    pub c_u: Assignment,
}

impl ModelState {
    /// Errors when a super-prototype column leaves the unit ball.
    pub fn check_feasible(&self) -> Result<()> {
        for (name, d) in [("D_v", &self.d_v), ("D_c", &self.d_c)] {
            for (j, col) in d.column_iter().enumerate() {
                let norm = col.norm();
                if norm > 1.0 + FEASIBILITY_TOL {
                    return Err(HplError::validation(format!(
                        "{name} column {j} has norm {norm:.12} > 1"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_super_prototypes(&self) -> usize {
        self.d_v.ncols()
    }
}

/// Per-outer-iteration convergence record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitHistory {
    pub objective_per_outer: Vec<f64>,
    pub err1_per_outer: Vec<f64>,
    pub err2_per_outer: Vec<f64>,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Objective after the final unseen solve.
    pub final_objective: f64,
}

fn shape_error(what: &str, detail: String) -> HplError {
    HplError::validation(format!("{what}: shape mismatch ({detail})"))
}

/// `Σ_i ‖Pᵀx_i − c_i‖² + ‖x_i − P c_i‖²`.
pub fn encoding_cost(x: &Matrix, c: &Assignment, p: &Matrix) -> Result<f64> {
    if x.nrows() != p.nrows() || c.len() != x.ncols() || c.classes() != p.ncols() {
        return Err(shape_error(
            "encoding cost",
            format!(
                "X {}x{}, C {}x{}, P {}x{}",
                x.nrows(),
                x.ncols(),
                c.classes(),
                c.len(),
                p.nrows(),
                p.ncols()
            ),
        ));
    }
    let proj = p.tr_mul(x);
    let mut total = 0.0;
    for (i, &l) in c.labels().iter().enumerate() {
        let forward: f64 = proj
            .column(i)
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let t = if j == l { v - 1.0 } else { v };
                t * t
            })
            .sum();
        let reverse = (x.column(i) - p.column(l)).norm_squared();
        total += forward + reverse;
    }
    Ok(total)
}

pub fn encoding_cost_seen(x_s: &Matrix, c_s: &Assignment, p_s: &Matrix) -> Result<f64> {
    encoding_cost(x_s, c_s, p_s)
}

pub fn encoding_cost_unseen(x_u: &Matrix, c_u: &Assignment, p_u: &Matrix) -> Result<f64> {
    encoding_cost(x_u, c_u, p_u)
}

/// Encoding through the concatenated prototypes `[P_s, P_u]`; `c_u` spans `m + n` classes.
pub fn encoding_cost_gzsl(
    x_u: &Matrix,
    c_u: &Assignment,
    p_s: &Matrix,
    p_u: &Matrix,
) -> Result<f64> {
    if p_s.nrows() != p_u.nrows() {
        return Err(shape_error(
            "gzsl encoding cost",
            format!("P_s has {} rows, P_u has {}", p_s.nrows(), p_u.nrows()),
        ));
    }
    encoding_cost(x_u, c_u, &concat_columns(p_s, p_u))
}

pub fn concat_columns(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// `‖P − D_v Z‖²_F + λ‖Y − D_c Z‖²_F`.
pub fn alignment_cost(
    p: &Matrix,
    y: &Matrix,
    d_v: &Matrix,
    d_c: &Matrix,
    z: &Matrix,
    lambda: f64,
) -> Result<f64> {
    let q = z.nrows();
    if d_v.ncols() != q
        || d_c.ncols() != q
        || p.nrows() != d_v.nrows()
        || y.nrows() != d_c.nrows()
        || p.ncols() != z.ncols()
        || y.ncols() != z.ncols()
    {
        return Err(shape_error(
            "alignment cost",
            format!(
                "P {}x{}, Y {}x{}, D_v {}x{}, D_c {}x{}, Z {}x{}",
                p.nrows(),
                p.ncols(),
                y.nrows(),
                y.ncols(),
                d_v.nrows(),
                d_v.ncols(),
                d_c.nrows(),
                d_c.ncols(),
                z.nrows(),
                z.ncols()
            ),
        ));
    }
    if !(lambda >= 0.0) {
        return Err(HplError::validation("lambda must be nonnegative"));
    }
    let visual = (p - d_v * z).norm_squared();
    let semantic = if lambda == 0.0 {
        0.0
    } else {
        (y - d_c * z).norm_squared()
    };
    Ok(visual + lambda * semantic)
}

/// Unweighted cost terms at a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub enc_seen: f64,
    pub align_seen: f64,
    /// Unseen encoding (Eq. 10 form in GZSL mode; 0 in inductive mode).
    pub enc_unseen: f64,
    pub align_unseen: f64,
}

impl ObjectiveTerms {
    pub fn weighted(&self, hp: &HyperParams) -> f64 {
        let beta = hp.beta();
        beta * self.enc_seen
            + self.align_seen
            + hp.gamma() * (beta * self.enc_unseen + self.align_unseen)
    }
}

pub fn objective_terms(
    state: &ModelState,
    seen: &LabeledFeatureSet,
    unseen: &UnlabeledFeatureSet,
    hp: &HyperParams,
) -> Result<ObjectiveTerms> {
    let lambda = hp.lambda();
    let enc_seen = encoding_cost(seen.features(), seen.onehot(), &state.p_s)?;
    let align_seen = alignment_cost(
        &state.p_s,
        seen.semantics(),
        &state.d_v,
        &state.d_c,
        &state.z_s,
        lambda,
    )?;
    let enc_unseen = match hp.mode {
        Mode::Transductive => encoding_cost(unseen.features(), &state.c_u, &state.p_u)?,
        Mode::Gzsl => encoding_cost_gzsl(unseen.features(), &state.c_u, &state.p_s, &state.p_u)?,
        Mode::Inductive => 0.0,
    };
    let align_unseen = alignment_cost(
        &state.p_u,
        unseen.semantics(),
        &state.d_v,
        &state.d_c,
        &state.z_u,
        lambda,
    )?;
    Ok(ObjectiveTerms {
        enc_seen,
        align_seen,
        enc_unseen,
        align_unseen,
    })
}

/// Full objective at the current state in the `(β, λ, γ)` weighting.
pub fn total_objective(
    state: &ModelState,
    seen: &LabeledFeatureSet,
    unseen: &UnlabeledFeatureSet,
    hp: &HyperParams,
) -> Result<f64> {
    state.check_feasible()?;
    Ok(objective_terms(state, seen, unseen, hp)?.weighted(hp))
}

/// Seen-side objective with the unseen block frozen, in the `(ρ, ω, α)`
/// weighting. Equals `(1−ρ)(1−ω)(1−α)` times the `(β, λ, γ)` form returned
/// by [`seen_objective`].
pub fn seen_objective_bounded(
    state: &ModelState,
    seen: &LabeledFeatureSet,
    y_u: &Matrix,
    hp: &HyperParams,
) -> Result<f64> {
    let (rho, omega, alpha) = (hp.rho, hp.omega, hp.alpha);
    let enc = encoding_cost(seen.features(), seen.onehot(), &state.p_s)?;
    let ps_fit = alignment_cost(
        &state.p_s,
        seen.semantics(),
        &state.d_v,
        &state.d_c,
        &state.z_s,
        0.0,
    )?;
    let ys_fit = (seen.semantics() - &state.d_c * &state.z_s).norm_squared();
    let pu_fit = alignment_cost(&state.p_u, y_u, &state.d_v, &state.d_c, &state.z_u, 0.0)?;
    let yu_fit = (y_u - &state.d_c * &state.z_u).norm_squared();
    Ok(rho * (1.0 - omega) * (1.0 - alpha) * enc
        + (1.0 - rho) * (1.0 - omega) * (1.0 - alpha) * ps_fit
        + omega * (1.0 - rho) * (1.0 - alpha) * ys_fit
        + alpha * (1.0 - rho) * (1.0 - omega) * pu_fit
        + omega * alpha * (1.0 - rho) * yu_fit)
}

/// `β·Φ_enc,s + Φ_alig,s + γ·Φ_alig,u`: the seen-side objective with the
/// unseen block frozen.
pub fn seen_objective(
    state: &ModelState,
    seen: &LabeledFeatureSet,
    y_u: &Matrix,
    hp: &HyperParams,
) -> Result<f64> {
    let lambda = hp.lambda();
    let enc = encoding_cost(seen.features(), seen.onehot(), &state.p_s)?;
    let align_s = alignment_cost(
        &state.p_s,
        seen.semantics(),
        &state.d_v,
        &state.d_c,
        &state.z_s,
        lambda,
    )?;
    let align_u = alignment_cost(&state.p_u, y_u, &state.d_v, &state.d_c, &state.z_u, lambda)?;
    Ok(hp.beta() * enc + align_s + hp.gamma() * align_u)
}
