//! Initialization of the super-prototypes and the first prototype estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HplError, Result};
use crate::kernels::{gram_ridge_solve, project_columns_unit_ball, Matrix};
use crate::model::{
    check_compatible, concat_columns, Assignment, HyperParams, InitKind, LabeledFeatureSet, Mode,
    ModelState, UnlabeledFeatureSet,
};

use super::fit::{cold_start_unseen, solve_seen, update_z_auto};
use super::updates::{code_system, update_p_sylvester};

const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone)]
pub struct KMeans {
    /// One centroid per column.
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(points: &Matrix, i: usize, centroids: &Matrix, j: usize) -> f64 {
    points
        .column(i)
        .iter()
        .zip(centroids.column(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Nearest centroid of every point, from `‖c‖² − 2·cᵀx`.
fn nearest_all(points: &Matrix, centroids: &Matrix) -> Vec<usize> {
    let cross = centroids.tr_mul(points);
    let norms: Vec<f64> = centroids.column_iter().map(|c| c.norm_squared()).collect();
    cross
        .column_iter()
        .map(|col| {
            let mut best = (0, f64::INFINITY);
            for (j, (&dot, &norm)) in col.iter().zip(&norms).enumerate() {
                let d = norm - 2.0 * dot;
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect()
}

/// k-means++ seeding.
fn seed_centroids(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = points.ncols();
    let mut centroids = Matrix::zeros(points.nrows(), k);
    let first = rng.random_range(0..n);
    centroids.set_column(0, &points.column(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.set_column(c, &points.column(pick));
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, &centroids, c));
        }
    }
    centroids
}

/// Lloyd iterations from the given centroids. Empty clusters are re-seeded
/// at the point farthest from its centroid.
fn lloyd(points: &Matrix, mut centroids: Matrix) -> KMeans {
    let n = points.ncols();
    let k = centroids.ncols();
    let mut assignment = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let next = nearest_all(points, &centroids);
        if next == assignment {
            break;
        }
        assignment = next;
        let mut sums = Matrix::zeros(points.nrows(), k);
        let mut counts = vec![0usize; k];
        for (i, &j) in assignment.iter().enumerate() {
            let mut dst = sums.column_mut(j);
            dst += points.column(i);
            counts[j] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids.set_column(j, &(sums.column(j) / counts[j] as f64));
            } else {
                let far = (0..n)
                    .map(|i| (i, sq_dist(points, i, &centroids, assignment[i])))
                    .fold((0, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
                centroids.set_column(j, &points.column(far.0));
            }
        }
    }
    let inertia = (0..n)
        .map(|i| sq_dist(points, i, &centroids, assignment[i]))
        .sum();
    KMeans {
        centroids,
        assignment,
        inertia,
    }
}

/// Seeded k-means over the columns of `points`; keeps the restart with the
/// lowest inertia (earliest on ties).
pub fn kmeans(points: &Matrix, k: usize, restarts: usize, rng: &mut ChaCha8Rng) -> Result<KMeans> {
    if k == 0 || k > points.ncols() {
        return Err(HplError::validation(format!(
            "k-means needs 1 <= k <= {} points, got k = {k}",
            points.ncols()
        )));
    }
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, seed_centroids(points, k, rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Clusters the test features into one group per class and labels the
/// groups one-to-one. Relabelling leaves the encoding cost unchanged, so the
/// matching minimizes the summed alignment cost
/// `min_z ‖p_g − D_v z‖² + λ‖y_j − D_c z‖²` between each group prototype
/// `p_g` (the encoding-optimal prototype of the group) and each class
/// semantic vector `y_j`. Returns `None` with fewer samples than classes.
pub(crate) fn matched_clustering(
    x: &Matrix,
    semantics: &Matrix,
    d_v: &Matrix,
    d_c: &Matrix,
    hp: &HyperParams,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Assignment>> {
    let classes = semantics.ncols();
    if x.ncols() < classes {
        return Ok(None);
    }
    let clusters = kmeans(x, classes, hp.kmeans_restarts, rng)?;
    let groups = Assignment::new(clusters.assignment, classes)?;
    let q = d_v.ncols();
    let protos = if hp.beta() > 0.0 {
        update_p_sylvester(x, &groups, d_v, &Matrix::zeros(q, classes), hp.beta())?
    } else {
        clusters.centroids
    };
    let lambda = hp.lambda();
    let (gram, _) = code_system(&protos, semantics, d_v, d_c, lambda)?;
    let vis = d_v.tr_mul(&protos);
    let sem = d_c.tr_mul(semantics) * lambda;
    let rhs = Matrix::from_fn(q, classes * classes, |r, c| {
        vis[(r, c / classes)] + sem[(r, c % classes)]
    });
    let codes = gram_ridge_solve(&gram, &rhs, hp.ridge_for(&gram))?;
    let cost: Vec<Vec<f64>> = (0..classes)
        .map(|g| {
            (0..classes)
                .map(|j| {
                    let z = codes.column(g * classes + j);
                    (protos.column(g) - d_v * z).norm_squared()
                        + lambda * (semantics.column(j) - d_c * z).norm_squared()
                })
                .collect()
        })
        .collect();
    let class_of = min_cost_matching(&cost);
    let labels = groups.labels().iter().map(|&g| class_of[g]).collect();
    Assignment::new(labels, classes).map(Some)
}

/// Square assignment problem (Hungarian method with potentials): returns,
/// for each row, the column of a minimum-cost perfect matching.
fn min_cost_matching(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based working arrays; index 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; n];
    for j in 1..=n {
        col_of[row_of[j] - 1] = j - 1;
    }
    col_of
}

fn normalize_or(
    col: nalgebra::DVector<f64>,
    fallback: nalgebra::DVectorView<f64>,
) -> nalgebra::DVector<f64> {
    let norm = col.norm();
    if norm > 1e-12 {
        col / norm
    } else {
        fallback.into_owned()
    }
}

/// Initial seen prototypes, one normalized column per class.
pub(crate) fn initial_seen_prototypes(
    seen: &LabeledFeatureSet,
    kind: InitKind,
    rng: &mut ChaCha8Rng,
) -> Matrix {
    let x = seen.features();
    let m = seen.num_classes();
    let labels = seen.labels();
    let first_of = |c: usize| {
        labels
            .iter()
            .position(|&l| l == c)
            .expect("class has samples")
    };
    let counts = seen.onehot().counts();
    let means = {
        let mut s = seen.onehot().class_sums(x);
        for (j, &n) in counts.iter().enumerate() {
            let mut col = s.column_mut(j);
            col /= n as f64;
        }
        s
    };
    let raw = match kind {
        InitKind::ClassMean => means,
        InitKind::Kmeans => lloyd(x, means).centroids,
        InitKind::Sample => {
            let mut p = Matrix::zeros(x.nrows(), m);
            for c in 0..m {
                let members: Vec<usize> = labels
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l == c)
                    .map(|(i, _)| i)
                    .collect();
                let pick = members[rng.random_range(0..members.len())];
                p.set_column(c, &x.column(pick));
            }
            p
        }
    };
    let mut p = Matrix::zeros(x.nrows(), m);
    for c in 0..m {
        let col = normalize_or(raw.column(c).into_owned(), x.column(first_of(c)));
        p.set_column(c, &col);
    }
    p
}

/// Builds the starting state.
///
/// `D_c` holds the k-means centroids of all semantic prototypes; `D_v` holds,
/// for each semantic cluster, the mean initial prototype of its seen members
/// (the global mean for clusters without seen members). The seen block is
/// then fitted alone (`γ = 0`) before the unseen block is cold-started.
pub fn init_state(
    seen: &LabeledFeatureSet,
    unseen: &UnlabeledFeatureSet,
    hp: &HyperParams,
) -> Result<ModelState> {
    hp.validate()?;
    check_compatible(seen, unseen)?;
    let m = seen.num_classes();
    let n = unseen.num_classes();
    let q = hp.num_super_prototypes(m, n);
    if q > m + n {
        return Err(HplError::validation(format!(
            "number of super-prototypes {q} exceeds the class count {}",
            m + n
        )));
    }
    let init = hp.init();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);

    let p_s = initial_seen_prototypes(seen, init.kind, &mut rng);

    let semantics = concat_columns(seen.semantics(), unseen.semantics());
    let clusters = kmeans(&semantics, q, init.kmeans_restarts, &mut rng)?;
    let d_c = project_columns_unit_ball(&clusters.centroids);

    let global_mean = p_s.column_sum() / m as f64;
    let mut d_v = Matrix::zeros(p_s.nrows(), q);
    let mut members = vec![0usize; q];
    for (class, &cluster) in clusters.assignment.iter().take(m).enumerate() {
        let mut dst = d_v.column_mut(cluster);
        dst += p_s.column(class);
        members[cluster] += 1;
    }
    for (j, &count) in members.iter().enumerate() {
        if count == 0 {
            d_v.set_column(j, &global_mean);
        } else {
            let mut col = d_v.column_mut(j);
            col /= count as f64;
        }
    }
    let d_v = project_columns_unit_ball(&d_v);

    let z_s = update_z_auto(&p_s, seen.semantics(), &d_v, &d_c, hp)?;
    let mut state = ModelState {
        p_s,
        p_u: Matrix::zeros(seen.feature_dim(), n),
        d_v,
        d_c,
        z_s,
        z_u: Matrix::zeros(q, n),
        c_u: crate::model::Assignment::new(vec![], n)?,
    };
    let warmup = HyperParams {
        alpha: 0.0,
        mode: Mode::Transductive,
        ..hp.clone()
    };
    solve_seen(&mut state, seen, unseen, &warmup)?;
    cold_start_unseen(&mut state, seen, unseen, hp)?;
    Ok(state)
}
