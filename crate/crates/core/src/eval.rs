//! Average per-class accuracy and the GZSL harmonic mean.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{HplError, Result};
use crate::kernels::Matrix;

/// Predictions to score: a `classes × N` score matrix (higher is better) or
/// one hard label per sample.
#[derive(Debug, Clone, Copy)]
pub enum Predictions<'a> {
    Scores(&'a Matrix),
    Labels(&'a [usize]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Per-class top-k accuracy averaged (unweighted) over the classes present in
/// `truth`. Score ties rank the smaller class index first.
pub fn per_class_topk_accuracy(
    predictions: Predictions<'_>,
    truth: &[usize],
    k: usize,
) -> Result<(f64, BTreeMap<usize, ClassAccuracy>)> {
    if truth.is_empty() {
        return Err(HplError::validation("truth is empty"));
    }
    if k == 0 {
        return Err(HplError::validation("top-k needs k >= 1"));
    }
    let hit: Box<dyn Fn(usize) -> bool + '_> = match predictions {
        Predictions::Labels(labels) => {
            if k != 1 {
                return Err(HplError::validation("hard labels only support k = 1"));
            }
            if labels.len() != truth.len() {
                return Err(HplError::validation(format!(
                    "length mismatch: {} predictions for {} truth labels",
                    labels.len(),
                    truth.len()
                )));
            }
            Box::new(move |i| labels[i] == truth[i])
        }
        Predictions::Scores(scores) => {
            if scores.ncols() != truth.len() {
                return Err(HplError::validation(format!(
                    "length mismatch: {} score columns for {} truth labels",
                    scores.ncols(),
                    truth.len()
                )));
            }
            if let Some(&c) = truth.iter().find(|&&c| c >= scores.nrows()) {
                return Err(HplError::validation(format!(
                    "truth class {} is absent from the {} score rows",
                    c + 1,
                    scores.nrows()
                )));
            }
            Box::new(move |i| {
                let c = truth[i];
                let col = scores.column(i);
                let target = col[c];
                let ahead = col
                    .iter()
                    .enumerate()
                    .filter(|&(j, &s)| s > target || (s == target && j < c))
                    .count();
                ahead < k
            })
        }
    };

    let mut per_class: BTreeMap<usize, ClassAccuracy> = BTreeMap::new();
    for (i, &c) in truth.iter().enumerate() {
        let entry = per_class.entry(c).or_insert(ClassAccuracy {
            correct: 0,
            total: 0,
            accuracy: 0.0,
        });
        entry.total += 1;
        if hit(i) {
            entry.correct += 1;
        }
    }
    for entry in per_class.values_mut() {
        entry.accuracy = entry.correct as f64 / entry.total as f64;
    }
    let mean = per_class.values().map(|e| e.accuracy).sum::<f64>() / per_class.len() as f64;
    Ok((mean, per_class))
}

/// `2·a_s·a_u / (a_s + a_u)`, with `H(0, 0) = 0`.
pub fn harmonic_mean(acc_s: f64, acc_u: f64) -> f64 {
    let sum = acc_s + acc_u;
    if sum == 0.0 {
        0.0
    } else {
        2.0 * acc_s * acc_u / sum
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_unseen: f64,
    pub acc_seen: Option<f64>,
    pub harmonic_mean: Option<f64>,
    /// Keyed by 0-based class index in the evaluated label space.
    pub per_class: BTreeMap<usize, ClassAccuracy>,
}

/// Standard zero-shot report: per-class top-1 accuracy over unseen classes.
pub fn evaluate_zsl(labels: &[usize], truth: &[usize]) -> Result<EvalReport> {
    let (acc, per_class) = per_class_topk_accuracy(Predictions::Labels(labels), truth, 1)?;
    Ok(EvalReport {
        acc_unseen: acc,
        acc_seen: None,
        harmonic_mean: None,
        per_class,
    })
}

/// Generalized zero-shot report over `m` seen classes (indices `0..m`) and
/// `n` unseen classes (`m..m+n`).
pub fn evaluate_gzsl(labels: &[usize], truth: &[usize], m: usize, n: usize) -> Result<EvalReport> {
    if let Some(&c) = truth.iter().find(|&&c| c >= m + n) {
        return Err(HplError::validation(format!(
            "truth class {} exceeds the {} classes",
            c + 1,
            m + n
        )));
    }
    let (_, per_class) = per_class_topk_accuracy(Predictions::Labels(labels), truth, 1)?;
    let mean_over = |range: std::ops::Range<usize>| {
        let accs: Vec<f64> = per_class.range(range).map(|(_, e)| e.accuracy).collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    };
    let acc_seen = mean_over(0..m)
        .ok_or_else(|| HplError::validation("gzsl truth has no seen-class samples"))?;
    let acc_unseen = mean_over(m..m + n)
        .ok_or_else(|| HplError::validation("gzsl truth has no unseen-class samples"))?;
    Ok(EvalReport {
        acc_unseen,
        acc_seen: Some(acc_seen),
        harmonic_mean: Some(harmonic_mean(acc_seen, acc_unseen)),
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn perfect_predictions() {
        let truth = [0, 1, 1, 2];
        let (acc, _) = per_class_topk_accuracy(Predictions::Labels(&truth), &truth, 1).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn two_class_fixture() {
        let truth = [0, 0, 0, 0, 1];
        let labels = [0, 1, 0, 1, 1];
        let (acc, per) = per_class_topk_accuracy(Predictions::Labels(&labels), &truth, 1).unwrap();
        assert_eq!(acc, 0.75);
        assert_eq!(per[&0].correct, 2);
        assert_eq!(per[&0].total, 4);
    }

    #[test]
    fn topk_saturates_at_class_count() {
        let scores = Matrix::from_fn(3, 4, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let truth = [0, 1, 2, 0];
        let (acc, _) = per_class_topk_accuracy(Predictions::Scores(&scores), &truth, 3).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn topk_from_scores() {
        // sample 0: class 1 ranks second; sample 1: class 0 ranks first
        let scores = Matrix::from_column_slice(3, 2, &[0.9, 0.5, 0.1, 0.8, 0.7, 0.2]);
        let truth = [1, 0];
        let (top1, _) = per_class_topk_accuracy(Predictions::Scores(&scores), &truth, 1).unwrap();
        let (top2, _) = per_class_topk_accuracy(Predictions::Scores(&scores), &truth, 2).unwrap();
        assert_eq!(top1, 0.5);
        assert_eq!(top2, 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(per_class_topk_accuracy(Predictions::Labels(&[]), &[], 1).is_err());
        let scores = Matrix::zeros(2, 1);
        assert!(per_class_topk_accuracy(Predictions::Scores(&scores), &[2], 1).is_err());
        assert!(per_class_topk_accuracy(Predictions::Labels(&[0]), &[0], 2).is_err());
    }

    #[test]
    fn harmonic_values() {
        assert_relative_eq!(harmonic_mean(0.6, 0.3), 0.4, epsilon = 1e-15);
        assert_eq!(harmonic_mean(0.0, 0.9), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        for x in [0.1, 0.37, 1.0] {
            assert_relative_eq!(harmonic_mean(x, x), x, epsilon = 1e-15);
        }
    }

    #[test]
    fn gzsl_cases() {
        let truth = [0, 0, 1, 1, 2, 2];
        let perfect = evaluate_gzsl(&truth, &truth, 2, 1).unwrap();
        assert_eq!(perfect.harmonic_mean, Some(1.0));

        let biased = evaluate_gzsl(&[0, 0, 1, 1, 0, 1], &truth, 2, 1).unwrap();
        assert_eq!(biased.acc_unseen, 0.0);
        assert_eq!(biased.harmonic_mean, Some(0.0));

        // class 0: 1/2, class 1: 1/2 -> Acc_S = 0.5; class 2: 2/2 -> Acc_U = 1
        let mixed = evaluate_gzsl(&[0, 1, 0, 1, 2, 2], &truth, 2, 1).unwrap();
        assert_eq!(mixed.acc_seen, Some(0.5));
        assert_eq!(mixed.acc_unseen, 1.0);
        assert_relative_eq!(mixed.harmonic_mean.unwrap(), 2.0 / 3.0, epsilon = 1e-15);

        assert!(evaluate_gzsl(&[0, 1], &[0, 1], 2, 1).is_err());
    }
}
