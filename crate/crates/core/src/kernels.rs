//! Dense kernels that every block update reduces to.
//!
//! All matrices are `nalgebra::DMatrix<f64>` (column-major). The Sylvester
//! solver specializes to symmetric operands, which is the only case the
//! prototype updates produce: `A = X Xᵀ` is fixed per dataset and `B` is
//! diagonal (per-class counts plus a ridge), so the eigendecomposition of `A`
//! is computed once and reused through [`SymmetricSpectrum`].

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{HplError, Result};

pub type Matrix = DMatrix<f64>;

const SYMMETRY_TOL: f64 = 1e-10;
const EIGEN_SUM_FLOOR: f64 = 1e-12;

/// Returns the first non-finite entry as `(row, col)`.
pub fn first_non_finite(m: &Matrix) -> Option<(usize, usize)> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Some((r, c));
            }
        }
    }
    None
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    match first_non_finite(m) {
        Some((r, c)) => Err(HplError::validation(format!(
            "{what} has a non-finite entry at row {r}, col {c}"
        ))),
        None => Ok(()),
    }
}

fn ensure_symmetric(m: &Matrix, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(HplError::validation(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let defect = (m - m.transpose()).norm();
    if defect > SYMMETRY_TOL * m.norm().max(1.0) {
        return Err(HplError::validation(format!(
            "{what} is not symmetric (defect {defect:.3e})"
        )));
    }
    Ok(())
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition `A = U diag(values) Uᵀ` of a symmetric operand.
///
/// `vectors == None` means `U = I` (a diagonal operand).
#[derive(Debug, Clone)]
pub struct SymmetricSpectrum {
    pub values: DVector<f64>,
    pub vectors: Option<Matrix>,
    operand: Matrix,
}

impl SymmetricSpectrum {
    pub fn new(a: &Matrix) -> Result<Self> {
        ensure_finite(a, "symmetric operand")?;
        ensure_symmetric(a, "symmetric operand")?;
        let operand = symmetrize(a);
        let eig = SymmetricEigen::new(operand.clone());
        Ok(Self {
            values: eig.eigenvalues,
            vectors: Some(eig.eigenvectors),
            operand,
        })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let values = DVector::from_column_slice(diag);
        Self {
            operand: Matrix::from_diagonal(&values),
            values,
            vectors: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Returns a spectrum for `A + shift·I`.
    pub fn shifted(&self, shift: f64) -> Self {
        let mut operand = self.operand.clone();
        for i in 0..operand.nrows() {
            operand[(i, i)] += shift;
        }
        Self {
            values: self.values.add_scalar(shift),
            vectors: self.vectors.clone(),
            operand,
        }
    }

    /// The (symmetrized) operand this spectrum was computed from.
    pub fn operand(&self) -> &Matrix {
        &self.operand
    }

    fn to_eigenbasis_left(&self, r: &Matrix) -> Matrix {
        match &self.vectors {
            Some(u) => u.tr_mul(r),
            None => r.clone(),
        }
    }

    fn back_from_eigenbasis_left(&self, r: &Matrix) -> Matrix {
        match &self.vectors {
            Some(u) => u * r,
            None => r.clone(),
        }
    }

    fn to_eigenbasis_right(&self, r: &Matrix) -> Matrix {
        match &self.vectors {
            Some(v) => r * v,
            None => r.clone(),
        }
    }

    fn back_from_eigenbasis_right(&self, r: &Matrix) -> Matrix {
        match &self.vectors {
            Some(v) => r * v.transpose(),
            None => r.clone(),
        }
    }
}

/// Solves `A·P + P·B = R` for symmetric `A` (PSD) and `B` (PD).
pub fn solve_sylvester_spd(a: &Matrix, b: &Matrix, r: &Matrix) -> Result<Matrix> {
    let sa = SymmetricSpectrum::new(a)?;
    let sb = SymmetricSpectrum::new(b)?;
    solve_sylvester_spectral(&sa, &sb, r)
}

/// Sylvester solve with precomputed spectra of both operands.
///
/// `P = U · ((Uᵀ R V) ⊘ (λ_i + σ_j)) · Vᵀ`, followed by one round of
/// residual refinement.
pub fn solve_sylvester_spectral(
    a: &SymmetricSpectrum,
    b: &SymmetricSpectrum,
    r: &Matrix,
) -> Result<Matrix> {
    if r.nrows() != a.dim() || r.ncols() != b.dim() {
        return Err(HplError::validation(format!(
            "sylvester shapes do not conform: A is {0}x{0}, B is {1}x{1}, R is {2}x{3}",
            a.dim(),
            b.dim(),
            r.nrows(),
            r.ncols()
        )));
    }
    ensure_finite(r, "sylvester right-hand side")?;
    for (i, &la) in a.values.iter().enumerate() {
        for (j, &sb) in b.values.iter().enumerate() {
            if la + sb <= EIGEN_SUM_FLOOR {
                return Err(HplError::Singular(format!(
                    "eigenvalue sum λ_{i} + σ_{j} = {:.3e} is not positive",
                    la + sb
                )));
            }
        }
    }
    let mut p = sylvester_core(a, b, r);
    let residual = r - (a.operand() * &p + &p * b.operand());
    p += sylvester_core(a, b, &residual);
    Ok(p)
}

fn sylvester_core(a: &SymmetricSpectrum, b: &SymmetricSpectrum, r: &Matrix) -> Matrix {
    let mut t = b.to_eigenbasis_right(&a.to_eigenbasis_left(r));
    for j in 0..t.ncols() {
        let sb = b.values[j];
        for i in 0..t.nrows() {
            t[(i, j)] /= a.values[i] + sb;
        }
    }
    b.back_from_eigenbasis_right(&a.back_from_eigenbasis_left(&t))
}

/// Solves `(G + tau·I) Z = R` for symmetric PSD `G` through a Cholesky factorization.
pub fn gram_ridge_solve(g: &Matrix, r: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(HplError::validation(format!(
            "ridge tau must be finite and nonnegative, got {tau}"
        )));
    }
    ensure_finite(g, "gram matrix")?;
    ensure_finite(r, "gram right-hand side")?;
    ensure_symmetric(g, "gram matrix")?;
    if r.nrows() != g.nrows() {
        return Err(HplError::validation(format!(
            "gram system shapes do not conform: G is {0}x{0}, R is {1}x{2}",
            g.nrows(),
            r.nrows(),
            r.ncols()
        )));
    }
    let mut h = symmetrize(g);
    for i in 0..h.nrows() {
        h[(i, i)] += tau;
    }
    let scale = h.diagonal().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let singular = || {
        HplError::Singular(format!(
            "gram system (G + {tau:.3e}·I) is numerically singular; use a larger ridge tau"
        ))
    };
    if h.nrows() == 0 {
        return Ok(r.clone());
    }
    if scale == 0.0 {
        return Err(singular());
    }
    let chol = Cholesky::new(h.clone()).ok_or_else(singular)?;
    let l = chol.l_dirty();
    let min_pivot = (0..h.nrows())
        .map(|i| l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if min_pivot * min_pivot <= 1e-14 * scale {
        return Err(singular());
    }
    let mut z = chol.solve(r);
    for _ in 0..2 {
        let residual = r - &h * &z;
        z += chol.solve(&residual);
    }
    Ok(z)
}

/// Norms within this much of 1 count as feasible, so projecting twice is a no-op.
const PROJECTION_SLACK: f64 = 4.0 * f64::EPSILON;

/// Scales every column with Euclidean norm above 1 back onto the unit sphere.
pub fn project_columns_unit_ball(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    project_columns_unit_ball_mut(&mut out);
    out
}

pub fn project_columns_unit_ball_mut(m: &mut Matrix) {
    for mut col in m.column_iter_mut() {
        let norm = col.norm();
        if norm > 1.0 + PROJECTION_SLACK {
            col /= norm;
        }
    }
}

/// Scales every column to unit Euclidean norm.
pub fn normalize_columns(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let norm = col.norm();
        if !(norm >= 1e-12) {
            return Err(HplError::validation(format!(
                "column {j} has norm {norm:.3e}, cannot normalize"
            )));
        }
        col /= norm;
    }
    Ok(out)
}

/// Largest column norm (0 for an empty matrix).
pub fn max_column_norm(m: &Matrix) -> f64 {
    m.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Armijo backtracking configuration for [`projected_descent`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineSearch {
    pub step0: f64,
    pub shrink: f64,
    pub c1: f64,
    pub max_steps: usize,
    pub tol: f64,
    pub max_shrinks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            step0: 1.0,
            shrink: 0.5,
            c1: 1e-4,
            max_steps: 50,
            tol: 1e-6,
            max_shrinks: 20,
        }
    }
}

impl LineSearch {
    pub fn validate(&self) -> Result<()> {
        if !(self.step0 > 0.0 && self.step0.is_finite()) {
            return Err(HplError::validation("line search step0 must be positive"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(HplError::validation(
                "line search shrink must lie in (0, 1)",
            ));
        }
        if !(self.c1 > 0.0 && self.c1 < 1.0) {
            return Err(HplError::validation("line search c1 must lie in (0, 1)"));
        }
        if !(self.tol >= 0.0) {
            return Err(HplError::validation("line search tol must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DescentOutcome {
    pub x: Matrix,
    /// Objective at the start point followed by the value after each accepted step.
    pub trace: Vec<f64>,
    pub steps: usize,
    /// Set when no step in the backtracking budget gave sufficient decrease.
    pub stalled: bool,
}

/// Projected gradient descent with Armijo backtracking.
///
/// A trial `X⁺ = project(X − s∇f(X))` is accepted when
/// `f(X⁺) ≤ f(X) − (c1/s)·‖X⁺ − X‖²`. With an inactive projection this is
/// the classical `f(X) − c1·s·‖∇f(X)‖²` condition; with an active one it
/// measures decrease along the projected arc. The run stops at a projected
/// stationary point, when the relative decrease drops below `tol`, or after
/// `max_steps` accepted steps.
pub fn projected_descent<F, G, P>(
    objective: F,
    gradient: G,
    x0: Matrix,
    project: P,
    ls: &LineSearch,
) -> Result<DescentOutcome>
where
    F: Fn(&Matrix) -> f64,
    G: Fn(&Matrix) -> Matrix,
    P: Fn(&Matrix) -> Matrix,
{
    ls.validate()?;
    let mut x = x0;
    let mut fx = objective(&x);
    if !fx.is_finite() {
        return Err(HplError::validation(
            "objective is not finite at the start point",
        ));
    }
    let mut trace = vec![fx];
    let mut steps = 0;
    let mut stalled = false;

    while steps < ls.max_steps {
        let g = gradient(&x);
        let gnorm2 = g.norm_squared();
        if gnorm2 == 0.0 {
            break;
        }
        // Projected stationarity: the full step is absorbed by the projection.
        let probe = project(&(&x - &g * ls.step0));
        let x_scale = x.norm().max(1.0);
        if (&probe - &x).norm() <= 1e-14 * x_scale {
            break;
        }

        let mut s = ls.step0;
        let mut accepted = None;
        for _ in 0..=ls.max_shrinks {
            let cand = project(&(&x - &g * s));
            let moved2 = (&cand - &x).norm_squared();
            let fc = objective(&cand);
            if fc.is_finite() && fc <= fx - ls.c1 / s * moved2 {
                accepted = Some((cand, fc));
                break;
            }
            s *= ls.shrink;
        }
        let Some((cand, fc)) = accepted else {
            stalled = true;
            break;
        };
        let decrease = fx - fc;
        x = cand;
        fx = fc;
        trace.push(fx);
        steps += 1;
        if decrease <= ls.tol * fx.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    Ok(DescentOutcome {
        x,
        trace,
        steps,
        stalled,
    })
}
