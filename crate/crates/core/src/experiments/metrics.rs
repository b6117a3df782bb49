//! Accuracy, Hand–Till multiclass AUROC, uncertainty thresholding and
//! uncertainty histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TmcError};

/// Fraction of `(predicted, truth)` pairs that agree.
pub fn accuracy(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for (p, t) in pairs {
        total += 1;
        if p == t {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(TmcError::Empty("accuracy of an empty set"));
    }
    Ok(hits as f64 / total as f64)
}

/// Hand–Till M with the list of class pairs that could not be scored
/// because one side had no samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocResult {
    pub value: f64,
    pub skipped_pairs: Vec<(usize, usize)>,
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Two-class AUC from scores and positive flags via the rank-sum statistic.
/// `None` when either class is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, p)| **p)
        .map(|(r, _)| r)
        .sum();
    let n_pos = n_pos as f64;
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

/// Hand–Till M: the mean over class pairs `i < j` of
/// `(A(i|j) + A(j|i)) / 2`, where `A(i|j)` ranks the class-`i` score among
/// samples of classes `i` and `j` only.
pub fn auroc_multiclass(scores: &[Vec<f64>], labels: &[usize], class_count: usize) -> Result<AurocResult> {
    if scores.len() != labels.len() {
        return Err(TmcError::DimensionMismatch {
            context: "auroc scores",
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if let Some(row) = scores.iter().find(|r| r.len() != class_count) {
        return Err(TmcError::ClassMismatch {
            expected: class_count,
            found: row.len(),
        });
    }
    let mut present = vec![false; class_count];
    for &l in labels {
        if l >= class_count {
            return Err(TmcError::InvalidConfig(format!("label {l} out of range")));
        }
        present[l] = true;
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(TmcError::InvalidDataset(
            "AUROC needs at least two classes present".into(),
        ));
    }

    let mut sum = 0.0;
    let mut scored = 0usize;
    let mut skipped_pairs = Vec::new();
    for i in 0..class_count {
        for j in (i + 1)..class_count {
            if !(present[i] && present[j]) {
                skipped_pairs.push((i, j));
                continue;
            }
            let members: Vec<usize> = (0..labels.len())
                .filter(|&s| labels[s] == i || labels[s] == j)
                .collect();
            let is_i: Vec<bool> = members.iter().map(|&s| labels[s] == i).collect();
            let is_j: Vec<bool> = is_i.iter().map(|b| !b).collect();
            let score_i: Vec<f64> = members.iter().map(|&s| scores[s][i]).collect();
            let score_j: Vec<f64> = members.iter().map(|&s| scores[s][j]).collect();
            let a_ij = binary_auc(&score_i, &is_i).expect("both classes present");
            let a_ji = binary_auc(&score_j, &is_j).expect("both classes present");
            sum += 0.5 * (a_ij + a_ji);
            scored += 1;
        }
    }
    Ok(AurocResult {
        value: sum / scored as f64,
        skipped_pairs,
    })
}

/// Accuracy among samples whose uncertainty is at most `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub threshold: f64,
    /// `None` when no sample is retained.
    pub accuracy: Option<f64>,
    pub retained_fraction: f64,
}

/// Evenly spaced thresholds over `[0, 1]`.
pub fn default_thresholds(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..count).map(|i| i as f64 / (count - 1) as f64).collect(),
    }
}

/// `samples` holds `(uncertainty, correct)` per evaluated sample.
pub fn threshold_curve(samples: &[(f64, bool)], thresholds: &[f64]) -> Result<Vec<ThresholdPoint>> {
    if samples.is_empty() {
        return Err(TmcError::Empty("threshold curve of an empty report"));
    }
    let n = samples.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let (mut kept, mut hits) = (0usize, 0usize);
            for &(u, correct) in samples {
                if u <= t {
                    kept += 1;
                    hits += usize::from(correct);
                }
            }
            ThresholdPoint {
                threshold: t,
                accuracy: (kept > 0).then(|| hits as f64 / kept as f64),
                retained_fraction: kept as f64 / n,
            }
        })
        .collect())
}

/// Accuracy over the `fraction` of samples with the lowest uncertainty
/// (ties broken by position).
pub fn accuracy_most_certain(samples: &[(f64, bool)], fraction: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(TmcError::Empty("no samples"));
    }
    let keep = ((samples.len() as f64 * fraction).round() as usize).clamp(1, samples.len());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].0.total_cmp(&samples[b].0).then(a.cmp(&b)));
    let correct = order[..keep].iter().filter(|&&i| samples[i].1).count();
    Ok(correct as f64 / keep as f64)
}

/// Normalized histograms of uncertainty for clean and noise-affected samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyDensity {
    pub bin_edges: Vec<f64>,
    /// Density values (integrating to 1 over `[0, 1]`); `None` if the group
    /// is empty.
    pub in_distribution: Option<Vec<f64>>,
    pub out_of_distribution: Option<Vec<f64>>,
    pub mean_in: Option<f64>,
    pub mean_ood: Option<f64>,
    pub count_in: usize,
    pub count_ood: usize,
}

/// `samples` holds `(uncertainty, is_ood)`.
pub fn uncertainty_density(samples: &[(f64, bool)], bins: usize) -> Result<UncertaintyDensity> {
    if bins == 0 {
        return Err(TmcError::InvalidConfig("histogram needs at least one bin".into()));
    }
    let width = 1.0 / bins as f64;
    let bin_edges = (0..=bins).map(|i| i as f64 * width).collect();
    let histogram = |want_ood: bool| -> (Option<Vec<f64>>, Option<f64>, usize) {
        let values: Vec<f64> = samples
            .iter()
            .filter(|(_, ood)| *ood == want_ood)
            .map(|(u, _)| *u)
            .collect();
        if values.is_empty() {
            return (None, None, 0);
        }
        let mut counts = vec![0.0; bins];
        for &u in &values {
            let b = ((u / width).floor() as usize).min(bins - 1);
            counts[b] += 1.0;
        }
        let n = values.len() as f64;
        let density = counts.into_iter().map(|c| c / (n * width)).collect();
        (Some(density), Some(values.iter().sum::<f64>() / n), values.len())
    };
    let (in_distribution, mean_in, count_in) = histogram(false);
    let (out_of_distribution, mean_ood, count_ood) = histogram(true);
    Ok(UncertaintyDensity {
        bin_edges,
        in_distribution,
        out_of_distribution,
        mean_in,
        mean_ood,
        count_in,
        count_ood,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy([(1, 1), (2, 2)]).unwrap(), 1.0);
        assert_eq!(accuracy([(1, 0), (2, 0)]).unwrap(), 0.0);
        assert_eq!(accuracy([(1, 1), (2, 0)]).unwrap(), 0.5);
        assert!(accuracy(std::iter::empty()).is_err());
    }

    #[test]
    fn midranks_share_ties() {
        assert_eq!(midranks(&[0.3, 0.1, 0.3, 0.2]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    /// Counts concordant (positive above negative) pairs, ties as one half.
    fn pair_count_auc(scores: &[f64], positive: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &pi) in positive.iter().enumerate() {
            for (j, &pj) in positive.iter().enumerate() {
                if pi && !pj {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn four_point_binary_instance() {
        // Positives at 0.8 and 0.4, negatives at 0.6 and 0.4: three of four
        // pairs ordered, one tie -> (2 + 0.5) / 4.
        let scores = [0.8, 0.6, 0.4, 0.4];
        let pos = [true, false, true, false];
        assert_eq!(binary_auc(&scores, &pos).unwrap(), 0.625);
        assert_eq!(pair_count_auc(&scores, &pos), 0.625);

        let two_class: Vec<Vec<f64>> = scores.iter().map(|&s| vec![s, 1.0 - s]).collect();
        let labels = [0, 1, 0, 1];
        assert_eq!(auroc_multiclass(&two_class, &labels, 2).unwrap().value, 0.625);
    }

    #[test]
    fn rank_sum_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let n = rng.random_range(2..40);
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
            let mut pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            pos[0] = true;
            pos[1] = false;
            let a = binary_auc(&scores, &pos).unwrap();
            assert!((a - pair_count_auc(&scores, &pos)).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_and_random_scores() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let perfect: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..3).map(|k| if k == l { 0.8 } else { 0.1 }).collect())
            .collect();
        assert_eq!(auroc_multiclass(&perfect, &labels, 3).unwrap().value, 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let labels: Vec<usize> = (0..6000).map(|i| i % 4).collect();
        let random: Vec<Vec<f64>> = labels
            .iter()
            .map(|_| {
                let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|r| r / s).collect()
            })
            .collect();
        let m = auroc_multiclass(&random, &labels, 4).unwrap().value;
        assert!((m - 0.5).abs() < 0.05, "M = {m}");
    }

    #[test]
    fn absent_class_pairs_are_skipped() {
        let labels = [0, 1, 0, 1];
        let scores = vec![vec![0.7, 0.2, 0.1]; 4];
        let r = auroc_multiclass(&scores, &labels, 3).unwrap();
        assert_eq!(r.skipped_pairs, vec![(0, 2), (1, 2)]);
        assert!(auroc_multiclass(&scores, &[0, 0, 0, 0], 3).is_err());
    }

    #[test]
    fn threshold_cases() {
        let samples = [(0.1, true), (0.2, true), (0.6, false), (0.9, true)];
        let curve = threshold_curve(&samples, &[1.0, 0.05, 0.2]).unwrap();
        assert_eq!(curve[0].accuracy, Some(0.75));
        assert_eq!(curve[0].retained_fraction, 1.0);
        assert_eq!(curve[1].accuracy, None);
        assert_eq!(curve[1].retained_fraction, 0.0);
        assert_eq!(curve[2].accuracy, Some(1.0));
        assert_eq!(curve[2].retained_fraction, 0.5);
        assert_eq!(accuracy_most_certain(&samples, 0.5).unwrap(), 1.0);
        assert!(threshold_curve(&[], &[0.5]).is_err());
        assert_eq!(default_thresholds(101).len(), 101);
        assert_eq!(default_thresholds(101)[50], 0.5);
    }

    #[test]
    fn density_cases() {
        let d = uncertainty_density(&[(0.1, false), (0.15, false), (0.95, false)], 10).unwrap();
        assert!(d.out_of_distribution.is_none());
        let h = d.in_distribution.unwrap();
        let integral: f64 = h.iter().map(|v| v * 0.1).sum();
        assert!((integral - 1.0).abs() < 1e-12);
        assert_eq!(d.count_in, 3);

        let d = uncertainty_density(&[(1.0, true), (0.5, true)], 4).unwrap();
        assert!(d.in_distribution.is_none());
        assert_eq!(d.mean_ood, Some(0.75));
        assert_eq!(d.out_of_distribution.unwrap()[3], 2.0);
    }
}
