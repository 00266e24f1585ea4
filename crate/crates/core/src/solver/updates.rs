//! Single-block minimizers. Each one returns the exact (or, for the
//! dictionaries, line-searched) minimizer of the objective in its block with
//! every other block held fixed.

use crate::error::{HplError, Result};
use crate::kernels::{
    gram_ridge_solve, project_columns_unit_ball, projected_descent, solve_sylvester_spectral,
    symmetrize, LineSearch, Matrix, SymmetricSpectrum,
};
use crate::model::{concat_columns, Assignment};

use super::SolveReport;

/// Gram matrix and right-hand side of the code update.
pub(crate) fn code_system(
    p: &Matrix,
    y: &Matrix,
    d_v: &Matrix,
    d_c: &Matrix,
    lambda: f64,
) -> Result<(Matrix, Matrix)> {
    let q = d_v.ncols();
    if d_c.ncols() != q
        || p.nrows() != d_v.nrows()
        || y.nrows() != d_c.nrows()
        || p.ncols() != y.ncols()
    {
        return Err(HplError::validation(format!(
            "code update: shape mismatch (P {}x{}, Y {}x{}, D_v {}x{}, D_c {}x{})",
            p.nrows(),
            p.ncols(),
            y.nrows(),
            y.ncols(),
            d_v.nrows(),
            d_v.ncols(),
            d_c.nrows(),
            d_c.ncols()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(HplError::validation("lambda must be nonnegative"));
    }
    let mut gram = d_v.tr_mul(d_v);
    let mut rhs = d_v.tr_mul(p);
    if lambda != 0.0 {
        gram += d_c.tr_mul(d_c) * lambda;
        rhs += d_c.tr_mul(y) * lambda;
    }
    Ok((symmetrize(&gram), rhs))
}

/// Closed-form code update:
/// `Z = (D_vᵀD_v + λ·D_cᵀD_c + τI)⁻¹ (D_vᵀP + λ·D_cᵀY)`.
pub fn update_z(
    p: &Matrix,
    y: &Matrix,
    d_v: &Matrix,
    d_c: &Matrix,
    lambda: f64,
    tau: f64,
) -> Result<Matrix> {
    let (gram, rhs) = code_system(p, y, d_v, d_c, lambda)?;
    gram_ridge_solve(&gram, &rhs, tau)
}

/// Solves `A·P + P·diag(counts + 1/β) = data_rhs + (1/β)·D_v Z`.
///
/// `β = 0` is the alignment-only limit `P = D_v Z`.
pub(crate) fn prototype_solve(
    a: &SymmetricSpectrum,
    data_rhs: &Matrix,
    counts: &[f64],
    dvz: &Matrix,
    beta: f64,
) -> Result<Matrix> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(HplError::validation(format!(
            "beta must be nonnegative, got {beta}"
        )));
    }
    if beta == 0.0 {
        return Ok(dvz.clone());
    }
    let inv = 1.0 / beta;
    let diag: Vec<f64> = counts.iter().map(|c| c + inv).collect();
    let rhs = data_rhs + dvz * inv;
    solve_sylvester_spectral(a, &SymmetricSpectrum::diagonal(&diag), &rhs)
}

fn check_prototype_shapes(x: &Matrix, c: &Assignment, d_v: &Matrix, z: &Matrix) -> Result<()> {
    if c.len() != x.ncols()
        || d_v.nrows() != x.nrows()
        || z.nrows() != d_v.ncols()
        || z.ncols() != c.classes()
    {
        return Err(HplError::validation(format!(
            "prototype update: shape mismatch (X {}x{}, C {}x{}, D_v {}x{}, Z {}x{})",
            x.nrows(),
            x.ncols(),
            c.classes(),
            c.len(),
            d_v.nrows(),
            d_v.ncols(),
            z.nrows(),
            z.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn counts_f64(c: &Assignment) -> Vec<f64> {
    c.counts().into_iter().map(|n| n as f64).collect()
}

/// Prototype update with a precomputed spectrum of `X Xᵀ`.
pub(crate) fn update_p_with(
    xxt: &SymmetricSpectrum,
    x: &Matrix,
    c: &Assignment,
    d_v: &Matrix,
    z: &Matrix,
    beta: f64,
) -> Result<Matrix> {
    check_prototype_shapes(x, c, d_v, z)?;
    let data_rhs = c.class_sums(x) * 2.0;
    prototype_solve(xxt, &data_rhs, &counts_f64(c), &(d_v * z), beta)
}

/// Prototype update: the unique stationary point of
/// `β·(‖PᵀX − C‖² + ‖X − PC‖²) + ‖P − D_v Z‖²`, i.e. the solution of
/// `(X Xᵀ)·P + P·(C Cᵀ + I/β) = 2·X Cᵀ + D_v Z/β`.
pub fn update_p_sylvester(
    x: &Matrix,
    c: &Assignment,
    d_v: &Matrix,
    z: &Matrix,
    beta: f64,
) -> Result<Matrix> {
    check_prototype_shapes(x, c, d_v, z)?;
    let xxt = SymmetricSpectrum::new(&(x * x.transpose()))?;
    update_p_with(&xxt, x, c, d_v, z, beta)
}

/// Per-sample assignment costs `‖x_i − p_j‖² − 2·(Pᵀx_i)_j` (classes × samples).
///
/// These differ from the full encoding cost of assigning sample `i` to class
/// `j` only by terms constant in `j`.
pub fn assignment_costs(x: &Matrix, p: &Matrix) -> Result<Matrix> {
    if x.nrows() != p.nrows() {
        return Err(HplError::validation(format!(
            "assignment: shape mismatch (X has d={}, P has d={})",
            x.nrows(),
            p.nrows()
        )));
    }
    let proj = p.tr_mul(x);
    let mut costs = Matrix::zeros(p.ncols(), x.ncols());
    for i in 0..x.ncols() {
        let xi = x.column(i);
        for j in 0..p.ncols() {
            costs[(j, i)] = (xi - p.column(j)).norm_squared() - 2.0 * proj[(j, i)];
        }
    }
    Ok(costs)
}

/// Column-wise argmin with ties resolved toward the smallest class index.
pub(crate) fn argmin_columns(costs: &Matrix) -> Vec<usize> {
    costs
        .column_iter()
        .map(|col| {
            let mut best = 0;
            for j in 1..col.len() {
                if col[j] < col[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Exhaustive assignment over one-hot candidates.
pub fn update_cu(x_u: &Matrix, p_u: &Matrix) -> Result<Assignment> {
    if p_u.ncols() == 0 {
        return Err(HplError::validation("assignment needs at least one class"));
    }
    let costs = assignment_costs(x_u, p_u)?;
    Assignment::new(argmin_columns(&costs), p_u.ncols())
}

/// Assignment over all `m + n` classes with prototypes `[P_s, P_u]`.
pub fn update_cu_gzsl(x_u: &Matrix, p_s: &Matrix, p_u: &Matrix) -> Result<Assignment> {
    if p_s.nrows() != p_u.nrows() {
        return Err(HplError::validation(
            "gzsl assignment: P_s and P_u row counts differ",
        ));
    }
    update_cu(x_u, &concat_columns(p_s, p_u))
}

/// Counts and per-class feature sums of the samples whose class lies in
/// `range`, indexed relative to `range.start`.
pub(crate) fn block_stats(
    c_u: &Assignment,
    range: std::ops::Range<usize>,
    x: &Matrix,
) -> (Vec<f64>, Matrix) {
    let width = range.len();
    let mut counts = vec![0.0; width];
    let mut sums = Matrix::zeros(x.nrows(), width);
    for (i, &l) in c_u.labels().iter().enumerate() {
        if range.contains(&l) {
            counts[l - range.start] += 1.0;
            let mut dst = sums.column_mut(l - range.start);
            dst += x.column(i);
        }
    }
    (counts, sums)
}

pub(crate) fn update_pu_gzsl_with(
    xxt: &SymmetricSpectrum,
    x_u: &Matrix,
    c_u: &Assignment,
    p_s: &Matrix,
    d_v: &Matrix,
    z_u: &Matrix,
    beta: f64,
) -> Result<Matrix> {
    let m = p_s.ncols();
    if c_u.classes() != m + z_u.ncols() || c_u.len() != x_u.ncols() || p_s.nrows() != x_u.nrows() {
        return Err(HplError::validation(format!(
            "gzsl prototype update: shape mismatch (C_u has {} classes, P_s has {m}, Z_u has {})",
            c_u.classes(),
            z_u.ncols()
        )));
    }
    if d_v.nrows() != x_u.nrows() || z_u.nrows() != d_v.ncols() {
        return Err(HplError::validation(
            "gzsl prototype update: D_v / Z_u shape mismatch",
        ));
    }
    let (counts, sums) = block_stats(c_u, m..c_u.classes(), x_u);
    // X Cᵤᵀ + (X − P_s C_s) Cᵤᵀ; every column is one-hot, so C_s Cᵤᵀ = 0 and
    // the second product equals the first.
    let data_rhs = sums * 2.0;
    prototype_solve(xxt, &data_rhs, &counts, &(d_v * z_u), beta)
}

/// Unseen prototypes under GZSL encoding with `P_s` fixed: solves
/// `(X Xᵀ)·P_u + P_u·(C_u Cᵤᵀ + I/β) = X Cᵤᵀ + (X − P_s C_s)·Cᵤᵀ + D_v Z_u/β`,
/// where `C_s`/`C_u` are the seen/unseen row blocks of the assignment.
pub fn update_pu_gzsl(
    x_u: &Matrix,
    c_u: &Assignment,
    p_s: &Matrix,
    d_v: &Matrix,
    z_u: &Matrix,
    beta: f64,
) -> Result<Matrix> {
    let xxt = SymmetricSpectrum::new(&(x_u * x_u.transpose()))?;
    update_pu_gzsl_with(&xxt, x_u, c_u, p_s, d_v, z_u, beta)
}

/// Dictionary update: projected gradient descent on
/// `f(D) = ‖T_s − D Z_s‖² + γ‖T_u − D Z_u‖²` over unit-ball columns.
pub fn update_d(
    d: &Matrix,
    z_s: &Matrix,
    z_u: &Matrix,
    t_s: &Matrix,
    t_u: &Matrix,
    gamma: f64,
    ls: &LineSearch,
) -> Result<(Matrix, SolveReport)> {
    let q = d.ncols();
    if z_s.nrows() != q
        || z_u.nrows() != q
        || t_s.nrows() != d.nrows()
        || t_u.nrows() != d.nrows()
        || t_s.ncols() != z_s.ncols()
        || t_u.ncols() != z_u.ncols()
    {
        return Err(HplError::validation(format!(
            "dictionary update: shape mismatch (D {}x{}, Z_s {}x{}, Z_u {}x{}, T_s {}x{}, T_u {}x{})",
            d.nrows(),
            d.ncols(),
            z_s.nrows(),
            z_s.ncols(),
            z_u.nrows(),
            z_u.ncols(),
            t_s.nrows(),
            t_s.ncols(),
            t_u.nrows(),
            t_u.ncols()
        )));
    }
    if !(gamma >= 0.0) {
        return Err(HplError::validation("gamma must be nonnegative"));
    }
    // f(D) = tr(Dᵀ D M) − 2 tr(Dᵀ N) + c with M = Z Zᵀ, N = T Zᵀ summed over both blocks.
    let mut zzt = z_s * z_s.transpose();
    let mut tzt = t_s * z_s.transpose();
    let mut constant = t_s.norm_squared();
    if gamma != 0.0 {
        zzt += z_u * z_u.transpose() * gamma;
        tzt += t_u * z_u.transpose() * gamma;
        constant += gamma * t_u.norm_squared();
    }
    let zzt = symmetrize(&zzt);
    let objective = |dm: &Matrix| {
        let dzz = dm * &zzt;
        (dm.dot(&dzz) - 2.0 * dm.dot(&tzt) + constant).max(0.0)
    };
    let gradient = |dm: &Matrix| (dm * &zzt - &tzt) * 2.0;
    let out = projected_descent(
        objective,
        gradient,
        d.clone(),
        project_columns_unit_ball,
        ls,
    )?;
    Ok((
        out.x,
        SolveReport {
            inner_iterations: out.steps,
            objective_trace: out.trace,
            stalled: out.stalled,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn z_orthonormal_dictionary_lambda_zero() {
        let d_v = Matrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.6, 0.8]);
        let d_c = Matrix::from_column_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p = Matrix::from_column_slice(3, 2, &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]);
        let y = Matrix::zeros(2, 2);
        let z = update_z(&p, &y, &d_v, &d_c, 0.0, 0.0).unwrap();
        assert_relative_eq!(z, d_v.transpose() * &p, epsilon = 1e-14);
    }

    #[test]
    fn p_sylvester_no_samples() {
        let x = Matrix::zeros(2, 0);
        let c = Assignment::new(vec![], 2).unwrap();
        let d_v = Matrix::from_column_slice(2, 1, &[0.5, 0.5]);
        let z = Matrix::from_row_slice(1, 2, &[1.0, -2.0]);
        let p = update_p_sylvester(&x, &c, &d_v, &z, 0.7).unwrap();
        assert_relative_eq!(p, &d_v * &z, epsilon = 1e-14);
    }

    #[test]
    fn p_sylvester_scalar() {
        let x = Matrix::from_element(1, 1, 1.0);
        let c = Assignment::new(vec![0], 1).unwrap();
        let d_v = Matrix::from_element(1, 1, 1.0);
        let z = Matrix::from_element(1, 1, 1.0);
        let p = update_p_sylvester(&x, &c, &d_v, &z, 1.0).unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn assignment_hand_case() {
        let p = Matrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let x = Matrix::from_column_slice(2, 1, &[0.8, 0.6]);
        let costs = assignment_costs(&x, &p).unwrap();
        assert_relative_eq!(costs[(0, 0)], -1.2, epsilon = 1e-14);
        assert_relative_eq!(costs[(1, 0)], -0.4, epsilon = 1e-14);
        assert_eq!(update_cu(&x, &p).unwrap().labels(), &[0]);
    }

    #[test]
    fn gzsl_tie_prefers_seen_copy() {
        let p = Matrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let x = Matrix::from_column_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let c = update_cu_gzsl(&x, &p, &p).unwrap();
        assert_eq!(c.labels(), &[1, 0]);
        assert_eq!(c.classes(), 4);
    }

    #[test]
    fn pu_gzsl_without_unseen_assignments() {
        let x = Matrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let c = Assignment::new(vec![0, 1], 3).unwrap();
        let p_s = Matrix::identity(2, 2);
        let d_v = Matrix::from_column_slice(2, 1, &[0.6, 0.8]);
        let z_u = Matrix::from_element(1, 1, 0.5);
        let p_u = update_pu_gzsl(&x, &c, &p_s, &d_v, &z_u, 2.0).unwrap();
        // X Xᵀ = I contributes, so P_u = (D_v Z_u / β) / (1 + 1/β) with zero counts
        let expected = &d_v * &z_u * (0.5 / 1.5);
        assert_relative_eq!(p_u, expected, epsilon = 1e-14);

        let empty = Matrix::zeros(2, 0);
        let none = Assignment::new(vec![], 3).unwrap();
        let p_u = update_pu_gzsl(&empty, &none, &p_s, &d_v, &z_u, 2.0).unwrap();
        assert_relative_eq!(p_u, &d_v * &z_u, epsilon = 1e-14);
    }

    #[test]
    fn d_update_stationary_start() {
        let d = Matrix::from_column_slice(2, 2, &[0.6, 0.0, 0.0, 0.5]);
        let z_s = Matrix::from_column_slice(2, 3, &[1.0, 0.2, -0.3, 0.7, 0.4, 0.4]);
        let z_u = Matrix::from_column_slice(2, 1, &[0.1, 0.9]);
        let t_s = &d * &z_s;
        let t_u = &d * &z_u;
        let (d2, report) =
            update_d(&d, &z_s, &z_u, &t_s, &t_u, 1.5, &LineSearch::default()).unwrap();
        assert_eq!(d2, d);
        assert_eq!(report.inner_iterations, 0);
    }
}
