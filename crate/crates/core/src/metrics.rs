//! Ranking metrics over outlier scores. Outliers (label 1) are the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetric {
    pub round: usize,
    pub auc: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub ap: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    #[serde(default)]
    pub per_round: Vec<RoundMetric>,
}

impl EvalReport {
    pub fn evaluate(scores: &[f64], labels: &[bool]) -> Result<Self> {
        let (n_pos, n_neg) = class_counts(scores, labels)?;
        Ok(Self {
            auc: auc(scores, labels)?,
            ap: average_precision(scores, labels)?,
            n_pos,
            n_neg,
            per_round: Vec::new(),
        })
    }
}

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            context: "metric inputs",
            expected: scores.len().to_string(),
            got: labels.len().to_string(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite { term: "score".into() });
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("both classes must be present"));
    }
    Ok((n_pos, n_neg))
}

/// Indices sorted by descending score, grouped into runs of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Area under the ROC curve in Mann-Whitney form: the probability that a random
/// outlier outscores a random inlier, with ties counted as one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = class_counts(scores, labels)?;
    // walk groups from the lowest score up, counting inliers already passed
    let mut negatives_below = 0usize;
    let mut credit = 0.0f64;
    for group in tie_groups(scores).into_iter().rev() {
        let pos = group.iter().filter(|&&i| labels[i]).count();
        let neg = group.len() - pos;
        credit += (pos * negatives_below) as f64 + 0.5 * (pos * neg) as f64;
        negatives_below += neg;
    }
    Ok(credit / (n_pos as f64 * n_neg as f64))
}

/// Step-wise average precision `sum_k (R_k - R_{k-1}) * P_k` over a descending
/// threshold sweep in which tied scores share one threshold.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, _) = class_counts(scores, labels)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for group in tie_groups(scores) {
        let pos = group.iter().filter(|&&i| labels[i]).count();
        tp += pos;
        fp += group.len() - pos;
        if pos > 0 {
            ap += (pos as f64 / n_pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// Sample mean and sample standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&b| b == 1).collect()
    }

    #[test]
    fn auc_small_cases() {
        let l = labels(&[0, 0, 1, 1]);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &l).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.7, 0.8], &l).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &l).unwrap(), 0.5);
    }

    #[test]
    fn ap_small_cases() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &labels(&[1, 0, 1])).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
        let ap = average_precision(&[0.9, 0.8, 0.1, 0.0], &labels(&[1, 1, 0, 0])).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(
            average_precision(&[0.1, 0.2], &[false, false]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn sample_std_of_three_values() {
        // mean 0.8, squared deviations 0.01 + 0 + 0.01, divided by 2 -> 0.01
        let (m, s) = mean_std(&[0.7, 0.8, 0.9]);
        assert!((m - 0.8).abs() < 1e-15);
        assert!((s - 0.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn strictly_increasing_transform_preserves_metrics(
            data in prop::collection::vec((0u8..20, any::<bool>()), 2..60)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| f64::from(*s) / 10.0).collect();
            let mut l: Vec<bool> = data.iter().map(|(_, b)| *b).collect();
            l[0] = true;
            l[1] = false;
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
            prop_assert_eq!(auc(&scores, &l).unwrap(), auc(&warped, &l).unwrap());
            prop_assert_eq!(
                average_precision(&scores, &l).unwrap(),
                average_precision(&warped, &l).unwrap()
            );
        }

        #[test]
        fn negating_scores_flips_auc(perm in Just((0..30).collect::<Vec<usize>>()).prop_shuffle(), split in 1usize..29) {
            let scores: Vec<f64> = perm.iter().map(|&v| v as f64).collect();
            let l: Vec<bool> = (0..30).map(|i| i < split).collect();
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let a = auc(&scores, &l).unwrap();
            let b = auc(&neg, &l).unwrap();
            prop_assert!((a - (1.0 - b)).abs() < 1e-12);
        }
    }
}
