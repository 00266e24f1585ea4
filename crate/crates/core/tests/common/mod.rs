#![allow(dead_code)]

use hpl::synth::SynthSpec;
use hpl::{HyperParams, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random symmetric positive definite matrix with eigenvalues roughly in [shift, shift + 2n].
pub fn spd(n: usize, shift: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let g = gaussian(n, n, rng);
    &g * g.transpose() / n as f64 * 2.0 + Matrix::identity(n, n) * shift
}

pub fn unit_columns(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut m = gaussian(rows, cols, rng);
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    m
}

pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Hyperparameters whose super-prototype count matches the generator's `q`.
pub fn matched_hp(spec: &SynthSpec) -> HyperParams {
    HyperParams {
        theta: Some(spec.q as f64 / (spec.m + spec.n) as f64),
        ..HyperParams::default()
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(x: &Matrix, h: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
    let mut g = Matrix::zeros(x.nrows(), x.ncols());
    let mut probe = x.clone();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let v = x[(i, j)];
            probe[(i, j)] = v + h;
            let up = f(&probe);
            probe[(i, j)] = v - h;
            let down = f(&probe);
            probe[(i, j)] = v;
            g[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    g
}

/// `∇_P [‖PᵀX − C‖² + ‖X − PC‖²] = 2X(XᵀP − Cᵀ) + 2(PC − X)Cᵀ`.
pub fn encoding_grad(x: &Matrix, c: &Matrix, p: &Matrix) -> Matrix {
    x * (x.transpose() * p - c.transpose()) * 2.0 + (p * c - x) * c.transpose() * 2.0
}

/// `∇_Z [‖P − D_v Z‖² + λ‖Y − D_c Z‖² + τ‖Z‖²]`.
pub fn code_grad(
    p: &Matrix,
    y: &Matrix,
    d_v: &Matrix,
    d_c: &Matrix,
    z: &Matrix,
    lambda: f64,
    tau: f64,
) -> Matrix {
    d_v.transpose() * (d_v * z - p) * 2.0
        + d_c.transpose() * (d_c * z - y) * (2.0 * lambda)
        + z * (2.0 * tau)
}

/// `∇_D ‖T − D Z‖² = 2(DZ − T)Zᵀ`.
pub fn dictionary_grad(d: &Matrix, z: &Matrix, t: &Matrix) -> Matrix {
    (d * z - t) * z.transpose() * 2.0
}

/// Brute-force assignment: for every sample, the one-hot column with the
/// smallest full per-sample encoding cost; ties keep the smaller index.
pub fn brute_force_assignment(x: &Matrix, p: &Matrix) -> Vec<usize> {
    (0..x.ncols())
        .map(|i| {
            let xi = x.column(i);
            let proj = p.transpose() * xi;
            let mut best = (0, f64::INFINITY);
            for j in 0..p.ncols() {
                let mut e = nalgebra::DVector::zeros(p.ncols());
                e[j] = 1.0;
                let cost = (&proj - e).norm_squared() + (xi - p.column(j)).norm_squared();
                if cost < best.1 {
                    best = (j, cost);
                }
            }
            best.0
        })
        .collect()
}
