//! Inner solves for the unseen and seen blocks and the outer alternation.

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::kernels::{gram_ridge_solve, symmetrize, Matrix, SymmetricSpectrum};
use crate::model::{
    alignment_cost, check_compatible, concat_columns, encoding_cost, encoding_cost_gzsl,
    seen_objective, FitHistory, HyperParams, LabeledFeatureSet, Mode, ModelState,
    UnlabeledFeatureSet,
};

use super::init::{init_state, matched_clustering};
use super::updates::{
    block_stats, code_system, counts_f64, prototype_solve, update_cu, update_cu_gzsl, update_d,
    update_p_sylvester, update_p_with, update_pu_gzsl, update_pu_gzsl_with,
};
use super::{Block, SolveReport};

/// Relative objective decrease below which an inner alternation stops.
pub const INNER_TOL: f64 = 1e-6;

/// Outer iterations without a new minimum of either `Err` before giving up.
pub const STALL_PATIENCE: usize = 5;

/// Offset of the cold-start random stream from the configured seed.
const COLD_START_STREAM: u64 = 0x5eed;

/// `update_z` with the configured (or automatic) ridge.
pub(crate) fn update_z_auto(
    p: &Matrix,
    y: &Matrix,
    d_v: &Matrix,
    d_c: &Matrix,
    hp: &HyperParams,
) -> Result<Matrix> {
    let (gram, rhs) = code_system(p, y, d_v, d_c, hp.lambda())?;
    gram_ridge_solve(&gram, &rhs, hp.ridge_for(&gram))
}

/// Result of the inductive closed form.
#[derive(Debug, Clone)]
pub struct InductivePrediction {
    pub p_u: Matrix,
    pub z_u: Matrix,
    pub c_u: crate::model::Assignment,
}

/// Inductive prediction: with the visual term minimized at `P_u = D_v Z_u`,
/// the codes come from the semantic ridge fit
/// `(λ·D_cᵀD_c + τI) Z_u = λ·D_cᵀY_u`, and samples are assigned by the
/// encoding-cost minimum search against the resulting prototypes.
pub fn predict_inductive(
    d_v: &Matrix,
    d_c: &Matrix,
    y_u: &Matrix,
    x_u: &Matrix,
    lambda: f64,
    tau: f64,
) -> Result<InductivePrediction> {
    let (gram, rhs) = semantic_system(d_c, y_u, lambda)?;
    let z_u = gram_ridge_solve(&gram, &rhs, tau)?;
    let p_u = d_v * &z_u;
    let c_u = update_cu(x_u, &p_u)?;
    Ok(InductivePrediction { p_u, z_u, c_u })
}

fn semantic_system(d_c: &Matrix, y_u: &Matrix, lambda: f64) -> Result<(Matrix, Matrix)> {
    if y_u.nrows() != d_c.nrows() {
        return Err(crate::error::HplError::validation(format!(
            "inductive prediction: Y_u has k={}, D_c has k={}",
            y_u.nrows(),
            d_c.nrows()
        )));
    }
    Ok((
        symmetrize(&(d_c.tr_mul(d_c) * lambda)),
        d_c.tr_mul(y_u) * lambda,
    ))
}

/// Replaces the unseen block by a cold start. Inductive mode takes the closed
/// form as is; otherwise the test features are clustered, the clusters are
/// matched one-to-one to the classes (all `m + n` in GZSL), and `P_u`, `Z_u`
/// are refit to that assignment.
pub(crate) fn cold_start_unseen(
    state: &mut ModelState,
    seen: &LabeledFeatureSet,
    unseen: &UnlabeledFeatureSet,
    hp: &HyperParams,
) -> Result<()> {
    let (gram, _) = semantic_system(&state.d_c, unseen.semantics(), hp.lambda())?;
    let pred = predict_inductive(
        &state.d_v,
        &state.d_c,
        unseen.semantics(),
        unseen.features(),
        hp.lambda(),
        hp.ridge_for(&gram),
    )?;
    if hp.mode == Mode::Inductive {
        state.c_u = pred.c_u;
        state.p_u = pred.p_u;
        state.z_u = pred.z_u;
        return Ok(());
    }
    let x = unseen.features();
    let semantics = match hp.mode {
        Mode::Gzsl => concat_columns(seen.semantics(), unseen.semantics()),
        _ => unseen.semantics().clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed.wrapping_add(COLD_START_STREAM));
    state.c_u = match matched_clustering(x, &semantics, &state.d_v, &state.d_c, hp, &mut rng)? {
        Some(c) => c,
        None if hp.mode == Mode::Gzsl => update_cu_gzsl(x, &state.p_s, &pred.p_u)?,
        None => pred.c_u,
    };
    state.z_u = pred.z_u;
    state.p_u = match hp.mode {
        Mode::Gzsl => update_pu_gzsl(x, &state.c_u, &state.p_s, &state.d_v, &state.z_u, hp.beta())?,
        _ => update_p_sylvester(x, &state.c_u, &state.d_v, &state.z_u, hp.beta())?,
    };
    state.z_u = update_z_auto(&state.p_u, unseen.semantics(), &state.d_v, &state.d_c, hp)?;
    Ok(())
}

/// Cached `X_u X_uᵀ` spectrum.
pub(crate) struct UnseenCache {
    gram: SymmetricSpectrum,
}

impl UnseenCache {
    pub(crate) fn new(unseen: &UnlabeledFeatureSet) -> Result<Self> {
        let x = unseen.features();
        Ok(Self {
            gram: SymmetricSpectrum::new(&symmetrize(&(x * x.transpose())))?,
        })
    }
}

/// Cached seen-side Sylvester data. In GZSL mode the left operand also
/// carries `γ·X_u X_uᵀ`, because unseen samples assigned to seen classes are
/// encoded by `P_s`.
pub(crate) struct SeenCache {
    gram: SymmetricSpectrum,
    sums2: Matrix,
    counts: Vec<f64>,
}

impl SeenCache {
    pub(crate) fn new(
        seen: &LabeledFeatureSet,
        unseen: &UnlabeledFeatureSet,
        hp: &HyperParams,
    ) -> Result<Self> {
        let x = seen.features();
        let mut a = x * x.transpose();
        if hp.mode == Mode::Gzsl && hp.gamma() != 0.0 {
            let xu = unseen.features();
            a += xu * xu.transpose() * hp.gamma();
        }
        Ok(Self {
            gram: SymmetricSpectrum::new(&symmetrize(&a))?,
            sums2: seen.onehot().class_sums(x) * 2.0,
            counts: counts_f64(seen.onehot()),
        })
    }
}

fn unseen_objective(
    state: &ModelState,
    unseen: &UnlabeledFeatureSet,
    hp: &HyperParams,
) -> Result<f64> {
    let enc = match hp.mode {
        Mode::Transductive => encoding_cost(unseen.features(), &state.c_u, &state.p_u)?,
        Mode::Gzsl => encoding_cost_gzsl(unseen.features(), &state.c_u, &state.p_s, &state.p_u)?,
        Mode::Inductive => 0.0,
    };
    let align = alignment_cost(
        &state.p_u,
        unseen.semantics(),
        &state.d_v,
        &state.d_c,
        &state.z_u,
        hp.lambda(),
    )?;
    Ok(hp.beta() * enc + align)
}

fn seen_side_objective(
    state: &ModelState,
    seen: &LabeledFeatureSet,
    unseen: &UnlabeledFeatureSet,
    hp: &HyperParams,
) -> Result<f64> {
    let mut value = seen_objective(state, seen, unseen.semantics(), hp)?;
    if hp.mode == Mode::Gzsl && hp.gamma() != 0.0 {
        value += hp.gamma()
            * hp.beta()
            * encoding_cost_gzsl(unseen.features(), &state.c_u, &state.p_s, &state.p_u)?;
    }
    Ok(value)
}

fn small_decrease(prev: f64, next: f64) -> bool {
    prev - next <= INNER_TOL * prev.abs()
}

pub(crate) fn run_unseen(
    state: &mut ModelState,
    unseen: &UnlabeledFeatureSet,
    hp: &HyperParams,
    cache: &UnseenCache,
    max_iter: usize,
    observer: &mut dyn FnMut(Block, &ModelState),
) -> Result<SolveReport> {
    let mut report = SolveReport {
        inner_iterations: 0,
        objective_trace: vec![unseen_objective(state, unseen, hp)?],
        stalled: false,
    };
    if max_iter == 0 {
        return Ok(report);
    }
    let x_u = unseen.features();
    let y_u = unseen.semantics();
    let beta = hp.beta();

    if hp.mode == Mode::Inductive {
        let (gram, rhs) = semantic_system(&state.d_c, y_u, hp.lambda())?;
        state.z_u = gram_ridge_solve(&gram, &rhs, hp.ridge_for(&gram))?;
        observer(Block::UnseenCodes, state);
        state.p_u = &state.d_v * &state.z_u;
        observer(Block::UnseenPrototypes, state);
        state.c_u = update_cu(x_u, &state.p_u)?;
        observer(Block::Assignment, state);
        report.inner_iterations = 1;
        report
            .objective_trace
            .push(unseen_objective(state, unseen, hp)?);
        return Ok(report);
    }

    for _ in 0..max_iter {
        state.c_u = match hp.mode {
            Mode::Gzsl => update_cu_gzsl(x_u, &state.p_s, &state.p_u)?,
            _ => update_cu(x_u, &state.p_u)?,
        };
        observer(Block::Assignment, state);

        state.p_u = match hp.mode {
            Mode::Gzsl => update_pu_gzsl_with(
                &cache.gram,
                x_u,
                &state.c_u,
                &state.p_s,
                &state.d_v,
                &state.z_u,
                beta,
            )?,
            _ => update_p_with(&cache.gram, x_u, &state.c_u, &state.d_v, &state.z_u, beta)?,
        };
        observer(Block::UnseenPrototypes, state);

        state.z_u = update_z_auto(&state.p_u, y_u, &state.d_v, &state.d_c, hp)?;
        observer(Block::UnseenCodes, state);

        report.inner_iterations += 1;
        let prev = *report
            .objective_trace
            .last()
            .expect("trace starts non-empty");
        let next = unseen_objective(state, unseen, hp)?;
        report.objective_trace.push(next);
        if small_decrease(prev, next) {
            break;
        }
    }
    Ok(report)
}

pub(crate) fn run_seen(
    state: &mut ModelState,
    seen: &LabeledFeatureSet,
    unseen: &UnlabeledFeatureSet,
    hp: &HyperParams,
    cache: &SeenCache,
    max_iter: usize,
    observer: &mut dyn FnMut(Block, &ModelState),
) -> Result<SolveReport> {
    let mut report = SolveReport {
        inner_iterations: 0,
        objective_trace: vec![seen_side_objective(state, seen, unseen, hp)?],
        stalled: false,
    };
    let gamma = hp.gamma();
    let beta = hp.beta();
    let m = seen.num_classes();
    let gzsl_coupled = hp.mode == Mode::Gzsl && gamma != 0.0;

    for _ in 0..max_iter {
        state.z_s = update_z_auto(&state.p_s, seen.semantics(), &state.d_v, &state.d_c, hp)?;
        observer(Block::SeenCodes, state);

        let dvz = &state.d_v * &state.z_s;
        state.p_s = if gzsl_coupled {
            let (counts_u, sums_u) = block_stats(&state.c_u, 0..m, unseen.features());
            let counts: Vec<f64> = cache
                .counts
                .iter()
                .zip(&counts_u)
                .map(|(a, b)| a + gamma * b)
                .collect();
            let rhs = &cache.sums2 + sums_u * (2.0 * gamma);
            prototype_solve(&cache.gram, &rhs, &counts, &dvz, beta)?
        } else {
            prototype_solve(&cache.gram, &cache.sums2, &cache.counts, &dvz, beta)?
        };
        observer(Block::SeenPrototypes, state);

        let (d_v, rv) = update_d(
            &state.d_v,
            &state.z_s,
            &state.z_u,
            &state.p_s,
            &state.p_u,
            gamma,
            &hp.line_search,
        )?;
        state.d_v = d_v;
        observer(Block::VisualDictionary, state);

        let (d_c, rc) = update_d(
            &state.d_c,
            &state.z_s,
            &state.z_u,
            seen.semantics(),
            unseen.semantics(),
            gamma,
            &hp.line_search,
        )?;
        state.d_c = d_c;
        observer(Block::SemanticDictionary, state);
        report.stalled |= rv.stalled || rc.stalled;

        report.inner_iterations += 1;
        let prev = *report
            .objective_trace
            .last()
            .expect("trace starts non-empty");
        let next = seen_side_objective(state, seen, unseen, hp)?;
        report.objective_trace.push(next);
        if small_decrease(prev, next) {
            break;
        }
    }
    Ok(report)
}

/// Unseen-block solve with the super-prototypes fixed: alternates the
/// assignment, prototype and code updates. A cold start (`warm == false`)
/// first re-initializes the unseen block.
pub fn solve_unseen(
    state: &mut ModelState,
    seen: &LabeledFeatureSet,
    unseen: &UnlabeledFeatureSet,
    hp: &HyperParams,
    warm: bool,
) -> Result<SolveReport> {
    hp.validate()?;
    if !warm {
        cold_start_unseen(state, seen, unseen, hp)?;
    }
    let cache = UnseenCache::new(unseen)?;
    run_unseen(
        state,
        unseen,
        hp,
        &cache,
        hp.max_inner_unseen,
        &mut |_, _| {},
    )
}

/// Seen-block solve with the unseen block fixed: alternates `Z_s`, `P_s`,
/// `D_v` and `D_c` updates.
pub fn solve_seen(
    state: &mut ModelState,
    seen: &LabeledFeatureSet,
    unseen: &UnlabeledFeatureSet,
    hp: &HyperParams,
) -> Result<SolveReport> {
    hp.validate()?;
    check_compatible(seen, unseen)?;
    let cache = SeenCache::new(seen, unseen, hp)?;
    run_seen(
        state,
        seen,
        unseen,
        hp,
        &cache,
        hp.max_inner_seen,
        &mut |_, _| {},
    )
}

/// Runs the full alternation and returns the final state with its history.
pub fn fit(
    seen: &LabeledFeatureSet,
    unseen: &UnlabeledFeatureSet,
    hp: &HyperParams,
) -> Result<(ModelState, FitHistory)> {
    fit_observed(seen, unseen, hp, &mut |_, _| {})
}

/// As [`fit`], calling `observer` after every block update.
pub fn fit_observed(
    seen: &LabeledFeatureSet,
    unseen: &UnlabeledFeatureSet,
    hp: &HyperParams,
    observer: &mut dyn FnMut(Block, &ModelState),
) -> Result<(ModelState, FitHistory)> {
    let mut state = init_state(seen, unseen, hp)?;
    let unseen_cache = UnseenCache::new(unseen)?;
    let seen_cache = SeenCache::new(seen, unseen, hp)?;
    let mut history = FitHistory::default();

    let mut best = (f64::INFINITY, f64::INFINITY);
    let mut without_progress = 0;
    for t in 0..hp.max_outer {
        let d_v_prev = state.d_v.clone();
        let d_c_prev = state.d_c.clone();
        let ur = run_unseen(
            &mut state,
            unseen,
            hp,
            &unseen_cache,
            hp.max_inner_unseen,
            observer,
        )?;
        let sr = run_seen(
            &mut state,
            seen,
            unseen,
            hp,
            &seen_cache,
            hp.max_inner_seen,
            observer,
        )?;
        let err1 = (&state.d_v - &d_v_prev).norm();
        let err2 = (&state.d_c - &d_c_prev).norm();
        let objective = crate::model::total_objective(&state, seen, unseen, hp)?;
        debug!(
            "outer {t}: objective {objective:.9e}, err1 {err1:.3e}, err2 {err2:.3e}, inner {}/{}",
            ur.inner_iterations, sr.inner_iterations
        );
        history.objective_per_outer.push(objective);
        history.err1_per_outer.push(err1);
        history.err2_per_outer.push(err2);
        history.outer_iterations += 1;

        if err1 < hp.epsilon && err2 < hp.epsilon {
            history.converged = true;
            break;
        }
        if err1 < best.0 || err2 < best.1 {
            best = (best.0.min(err1), best.1.min(err2));
            without_progress = 0;
        } else {
            without_progress += 1;
            if without_progress >= STALL_PATIENCE {
                debug!("outer loop stalled after {} iterations", t + 1);
                break;
            }
        }
    }

    run_unseen(
        &mut state,
        unseen,
        hp,
        &unseen_cache,
        hp.max_inner_unseen,
        observer,
    )?;
    history.final_objective = crate::model::total_objective(&state, seen, unseen, hp)?;
    Ok((state, history))
}
