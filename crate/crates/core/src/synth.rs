//! Seeded synthetic instances drawn from the prototype generative structure
//! `P = normalize(D_v·Z)`, `Y ≈ D_c·Z`, with known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HplError, Result};
use crate::kernels::{normalize_columns, Matrix};
use crate::model::{Assignment, LabeledFeatureSet, ModelState, TruthSpace, UnlabeledFeatureSet};

/// Resampling attempts before giving up on the separation requirement.
pub const SEPARATION_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub d: usize,
    pub k: usize,
    pub q: usize,
    pub m: usize,
    pub n: usize,
    pub samples_per_class: usize,
    pub samples_per_unseen_class: usize,
    pub noise_sigma: f64,
    /// Minimum pairwise prototype distance, in units of `noise_sigma`.
    pub separation: f64,
    pub seed: u64,
    /// Seen-class samples added to the test pool per seen class. When
    /// non-zero the truth labels index all `m + n` classes, seen first.
    pub seen_test_per_class: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            d: 20,
            k: 10,
            q: 6,
            m: 8,
            n: 5,
            samples_per_class: 50,
            samples_per_unseen_class: 50,
            noise_sigma: 0.05,
            separation: 10.0,
            seed: 7,
            seen_test_per_class: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d", self.d),
            ("k", self.k),
            ("q", self.q),
            ("m", self.m),
            ("n", self.n),
            ("samples_per_class", self.samples_per_class),
            ("samples_per_unseen_class", self.samples_per_unseen_class),
        ] {
            if v == 0 {
                return Err(HplError::validation(format!("{name} must be at least 1")));
            }
        }
        if self.q > self.m + self.n {
            return Err(HplError::validation(format!(
                "q = {} exceeds m + n = {}",
                self.q,
                self.m + self.n
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(HplError::validation("noise_sigma must be finite and >= 0"));
        }
        if !(self.separation.is_finite() && self.separation >= 1.0) {
            return Err(HplError::validation("separation must be finite and >= 1"));
        }
        Ok(())
    }

    pub fn min_distance(&self) -> f64 {
        self.separation * self.noise_sigma
    }
}

fn gaussian(rows: usize, cols: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        sigma * rng.sample::<f64, _>(StandardNormal)
    })
}

/// Orthonormal columns when `rows >= cols`, otherwise unit Gaussian columns.
fn unit_columns(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let g = gaussian(rows, cols, 1.0, rng);
    if rows >= cols {
        Ok(g.qr().q())
    } else {
        normalize_columns(&g)
    }
}

fn min_pairwise_distance(p: &Matrix) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..p.ncols() {
        for j in i + 1..p.ncols() {
            best = best.min((p.column(i) - p.column(j)).norm());
        }
    }
    best
}

fn samples(
    p: &Matrix,
    classes: impl Iterator<Item = usize>,
    per_class: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Matrix, Vec<usize>)> {
    let labels: Vec<usize> = classes
        .flat_map(|c| std::iter::repeat_n(c, per_class))
        .collect();
    let mut x = Matrix::zeros(p.nrows(), labels.len());
    for (i, &c) in labels.iter().enumerate() {
        let noise = gaussian(p.nrows(), 1, sigma, rng);
        x.set_column(i, &(p.column(c) + noise));
    }
    let x = normalize_columns(&x)
        .map_err(|e| HplError::Generation(format!("degenerate noisy sample: {e}")))?;
    Ok((x, labels))
}

/// Generates a labelled seen set, an unlabelled test set with truth, and the
/// generating state. The first `m` classes are seen, the last `n` unseen.
pub fn synth_generate(
    spec: &SynthSpec,
) -> Result<(LabeledFeatureSet, UnlabeledFeatureSet, ModelState)> {
    spec.validate()?;
    let SynthSpec { d, k, q, m, n, .. } = *spec;
    let classes = m + n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let d_v = unit_columns(d, q, &mut rng)?;
    let d_c = unit_columns(k, q, &mut rng)?;

    let mut accepted = None;
    for _ in 0..SEPARATION_ATTEMPTS {
        let z = if q >= classes {
            unit_columns(q, classes, &mut rng)?
        } else {
            gaussian(q, classes, 1.0, &mut rng)
        };
        let raw = &d_v * &z;
        let norms: Vec<f64> = raw.column_iter().map(|c| c.norm()).collect();
        if norms.iter().any(|&v| v < 1e-8) {
            continue;
        }
        let mut p = raw;
        let mut z = z;
        for (j, &norm) in norms.iter().enumerate() {
            p.column_mut(j).unscale_mut(norm);
            z.column_mut(j).unscale_mut(norm);
        }
        if min_pairwise_distance(&p) > spec.min_distance() {
            accepted = Some((p, z));
            break;
        }
    }
    let (p, z) = accepted.ok_or_else(|| {
        HplError::Generation(format!(
            "no prototype set with pairwise distance > {} after {SEPARATION_ATTEMPTS} draws; \
             increase d or reduce m + n",
            spec.min_distance()
        ))
    })?;

    let y_raw = &d_c * &z + gaussian(k, classes, 0.1 * spec.noise_sigma, &mut rng);
    let y = normalize_columns(&y_raw)
        .map_err(|e| HplError::Generation(format!("degenerate semantic prototype: {e}")))?;

    let (x_s, labels_s) = samples(&p, 0..m, spec.samples_per_class, spec.noise_sigma, &mut rng)?;
    let (x_uu, labels_uu) = samples(
        &p,
        m..classes,
        spec.samples_per_unseen_class,
        spec.noise_sigma,
        &mut rng,
    )?;

    let (x_u, truth, truth_space, c_u) = if spec.seen_test_per_class == 0 {
        let truth: Vec<usize> = labels_uu.iter().map(|l| l - m).collect();
        let c_u = Assignment::new(truth.clone(), n)?;
        (x_uu, truth, TruthSpace::Unseen, c_u)
    } else {
        let (x_us, labels_us) = samples(
            &p,
            0..m,
            spec.seen_test_per_class,
            spec.noise_sigma,
            &mut rng,
        )?;
        let mut x_u = Matrix::zeros(d, x_us.ncols() + x_uu.ncols());
        x_u.columns_mut(0, x_us.ncols()).copy_from(&x_us);
        x_u.columns_mut(x_us.ncols(), x_uu.ncols()).copy_from(&x_uu);
        let truth: Vec<usize> = labels_us.into_iter().chain(labels_uu).collect();
        let c_u = Assignment::new(truth.clone(), classes)?;
        (x_u, truth, TruthSpace::All, c_u)
    };

    let seen = LabeledFeatureSet::new(x_s, labels_s, y.columns(0, m).into_owned(), None)?;
    let unseen = UnlabeledFeatureSet::new(
        x_u,
        y.columns(m, n).into_owned(),
        Some(truth),
        truth_space,
        None,
    )?;
    let state = ModelState {
        p_s: p.columns(0, m).into_owned(),
        p_u: p.columns(m, n).into_owned(),
        d_v,
        d_c,
        z_s: z.columns(0, m).into_owned(),
        z_u: z.columns(m, n).into_owned(),
        c_u,
    };
    Ok((seen, unseen, state))
}
