//! Hungarian-matched clustering accuracy and the old/new evaluation report.
//!
//! One global cluster-to-class matching is computed over every evaluated
//! sample; old/new/per-class accuracies are restrictions of that single
//! matching, never separate matchings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embedding::{imbalance_factor, ClassCounts};
use crate::error::{Error, Result};

/// Minimum-cost perfect assignment on a square cost matrix via shortest
/// augmenting paths with potentials, O(m^3). Returns row -> column and the
/// total cost.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = cost.len();
    if n == 0 {
        return Err(Error::invalid("cost", 0, "empty cost matrix"));
    }
    for (i, row) in cost.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Dimension {
                context: "cost matrix row",
                expected: n,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "cost",
                format!("row {i}"),
                "non-finite entry",
            ));
        }
    }

    // 1-based arrays; p[j] is the row matched to column j, 0 = unmatched.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
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
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // Unwind the augmenting path.
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum();
    Ok((assignment, total))
}

/// Contingency counts with dense renumbering of the distinct pred/truth ids.
struct Contingency {
    counts: Vec<Vec<usize>>,
    pred_ids: Vec<i64>,
    truth_ids: Vec<i64>,
}

fn contingency(pred: &[i64], truth: &[i64]) -> Result<Contingency> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension {
            context: "clustering accuracy",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::TooFewSamples {
            context: "clustering accuracy",
            needed: 1,
            got: 0,
        });
    }
    for (name, ids) in [("pred", pred), ("truth", truth)] {
        if let Some(pos) = ids.iter().position(|&x| x < 0) {
            return Err(Error::invalid(
                name,
                format!("index {pos}"),
                "negative id in evaluation input",
            ));
        }
    }
    let pred_map: BTreeMap<i64, usize> = pred
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c, i))
        .collect();
    let truth_map: BTreeMap<i64, usize> = truth
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c, i))
        .collect();
    let mut counts = vec![vec![0usize; truth_map.len()]; pred_map.len()];
    for (&c, &y) in pred.iter().zip(truth) {
        counts[pred_map[&c]][truth_map[&y]] += 1;
    }
    Ok(Contingency {
        counts,
        pred_ids: pred_map.keys().copied().collect(),
        truth_ids: truth_map.keys().copied().collect(),
    })
}

/// Optimal cluster-to-class map for the given samples: maximizes the matched
/// count via [`hungarian`] on negated contingency counts (rectangular input
/// zero-padded square). Only clusters matched to a real class appear.
pub fn optimal_matching(pred: &[i64], truth: &[i64]) -> Result<BTreeMap<i64, i64>> {
    let c = contingency(pred, truth)?;
    let m = c.counts.len().max(c.counts[0].len());
    let mut cost = vec![vec![0.0f64; m]; m];
    for (i, row) in c.counts.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            cost[i][j] = -(count as f64);
        }
    }
    let (assignment, _) = hungarian(&cost)?;
    let mut map = BTreeMap::new();
    for (i, &j) in assignment.iter().enumerate() {
        if i < c.pred_ids.len() && j < c.truth_ids.len() {
            map.insert(c.pred_ids[i], c.truth_ids[j]);
        }
    }
    Ok(map)
}

/// Clustering accuracy: the best-matching fraction of samples, invariant to
/// permutations of cluster ids.
pub fn clustering_acc(pred: &[i64], truth: &[i64]) -> Result<(f64, BTreeMap<i64, i64>)> {
    let matching = optimal_matching(pred, truth)?;
    let correct = pred
        .iter()
        .zip(truth)
        .filter(|&(c, y)| matching.get(c) == Some(y))
        .count();
    Ok((correct as f64 / truth.len() as f64, matching))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PerClassAcc {
    pub class: i64,
    pub acc: f64,
    pub count: usize,
}

/// Evaluation summary. `acc_*` are raw sample-weighted accuracies,
/// `balanced_*` unweighted means of per-class accuracy over the classes
/// present in that split; a split with no samples reports `None`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_all: f64,
    pub acc_old: Option<f64>,
    pub acc_new: Option<f64>,
    pub balanced_acc: f64,
    pub balanced_old: Option<f64>,
    pub balanced_new: Option<f64>,
    pub per_class: Vec<PerClassAcc>,
    pub matching: BTreeMap<i64, i64>,
    pub lambda_selected: Option<f64>,
}

/// Full GCD evaluation. `old_classes` partitions truth into old/new; the
/// optional `selected_subset` reports the imbalance ratio of true-class
/// counts inside it (classes present in the subset only).
pub fn gcd_report(
    pred: &[i64],
    truth: &[i64],
    old_classes: &std::collections::BTreeSet<i64>,
    selected_subset: Option<&[usize]>,
) -> Result<EvalReport> {
    let matching = optimal_matching(pred, truth)?;
    let hit = |i: usize| matching.get(&pred[i]) == Some(&truth[i]);

    let n = truth.len();
    let acc_all = (0..n).filter(|&i| hit(i)).count() as f64 / n as f64;

    let mut class_totals: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    for i in 0..n {
        let entry = class_totals.entry(truth[i]).or_insert((0, 0));
        entry.1 += 1;
        if hit(i) {
            entry.0 += 1;
        }
    }
    let per_class: Vec<PerClassAcc> = class_totals
        .iter()
        .map(|(&class, &(correct, count))| PerClassAcc {
            class,
            acc: correct as f64 / count as f64,
            count,
        })
        .collect();

    let split = |want_old: bool| -> Option<(f64, f64)> {
        let classes: Vec<&PerClassAcc> = per_class
            .iter()
            .filter(|p| old_classes.contains(&p.class) == want_old)
            .collect();
        if classes.is_empty() {
            return None;
        }
        let correct: usize = classes
            .iter()
            .map(|p| (p.acc * p.count as f64).round() as usize)
            .sum();
        let total: usize = classes.iter().map(|p| p.count).sum();
        let balanced = classes.iter().map(|p| p.acc).sum::<f64>() / classes.len() as f64;
        Some((correct as f64 / total as f64, balanced))
    };
    let old = split(true);
    let new = split(false);

    let balanced_acc = per_class.iter().map(|p| p.acc).sum::<f64>() / per_class.len() as f64;

    let lambda_selected = match selected_subset {
        Some(ids) if !ids.is_empty() => {
            let subset: Vec<i64> = ids
                .iter()
                .map(|&i| {
                    truth.get(i).copied().ok_or(Error::invalid(
                        "selected_subset",
                        i,
                        "id outside the evaluated range",
                    ))
                })
                .collect::<Result<_>>()?;
            Some(imbalance_factor(&ClassCounts::from_labels(&subset)?))
        }
        _ => None,
    };

    Ok(EvalReport {
        acc_all,
        acc_old: old.map(|(raw, _)| raw),
        acc_new: new.map(|(raw, _)| raw),
        balanced_acc,
        balanced_old: old.map(|(_, b)| b),
        balanced_new: new.map(|(_, b)| b),
        per_class,
        matching,
        lambda_selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    #[test]
    fn hungarian_identity_and_singleton() {
        let cost = vec![
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ];
        let (assign, total) = hungarian(&cost).unwrap();
        assert_eq!(assign, vec![0, 1, 2]);
        assert_eq!(total, 0.0);

        let (assign, total) = hungarian(&[vec![7.5]]).unwrap();
        assert_eq!(assign, vec![0]);
        assert_eq!(total, 7.5);
    }

    fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
        let n = cost.len();
        (0..n)
            .permutations(n)
            .map(|perm| (0..n).map(|i| cost[i][perm[i]]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(2..=6);
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(-10..=10) as f64).collect())
                .collect();
            let (assign, total) = hungarian(&cost).unwrap();
            let direct: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            assert_eq!(total, direct);
            assert_eq!(total, brute_force_min(&cost), "cost {cost:?}");
            // Assignment must be a permutation.
            let mut seen = assign.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn hungarian_rejects_bad_input() {
        assert!(hungarian(&[]).is_err());
        assert!(hungarian(&[vec![1.0, 2.0]]).is_err());
        assert!(hungarian(&[vec![f64::NAN]]).is_err());
    }

    #[test]
    fn acc_exact_and_permutation_invariant() {
        let truth = vec![0, 0, 1, 1, 2, 2];
        let (acc, _) = clustering_acc(&truth, &truth).unwrap();
        assert_eq!(acc, 1.0);

        // Relabelled clusters: same accuracy.
        let relabel = vec![5, 5, 9, 9, 7, 7];
        let (acc, matching) = clustering_acc(&relabel, &truth).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(matching[&5], 0);
        assert_eq!(matching[&9], 1);
        assert_eq!(matching[&7], 2);
    }

    fn exhaustive_acc(pred: &[i64], truth: &[i64]) -> f64 {
        let clusters: Vec<i64> = pred.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let classes: Vec<i64> = truth.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let m = clusters.len().max(classes.len());
        // Permute padded class slots across padded cluster slots.
        (0..m)
            .permutations(m)
            .map(|perm| {
                let correct = pred
                    .iter()
                    .zip(truth)
                    .filter(|&(c, y)| {
                        let ci = clusters.iter().position(|x| x == c).unwrap();
                        let yi = classes.iter().position(|x| x == y).unwrap();
                        perm[ci] == yi
                    })
                    .count();
                correct as f64 / truth.len() as f64
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn acc_equals_exhaustive_on_random_fixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..60 {
            let n = rng.gen_range(5..40);
            let k_pred = rng.gen_range(1..=6);
            let k_true = rng.gen_range(1..=6);
            let pred: Vec<i64> = (0..n).map(|_| rng.gen_range(0..k_pred)).collect();
            let truth: Vec<i64> = (0..n).map(|_| rng.gen_range(0..k_true)).collect();
            let (acc, _) = clustering_acc(&pred, &truth).unwrap();
            let brute = exhaustive_acc(&pred, &truth);
            assert_eq!(acc, brute, "case {case}");
        }
    }

    #[test]
    fn report_perfect_predictions() {
        let truth = vec![0, 0, 1, 1, 2, 2, 3];
        let old: BTreeSet<i64> = [0, 1].into_iter().collect();
        let r = gcd_report(&truth, &truth, &old, None).unwrap();
        assert_eq!(r.acc_all, 1.0);
        assert_eq!(r.acc_old, Some(1.0));
        assert_eq!(r.acc_new, Some(1.0));
        assert_eq!(r.balanced_acc, 1.0);
        assert_eq!(r.per_class.len(), 4);
    }

    #[test]
    fn single_cluster_exposes_head_bias() {
        // 10 head samples of class 0, 2 of class 1, 2 of class 2, all
        // predicted into one cluster: raw acc is the head share, balanced
        // acc is 1/K.
        let mut truth = vec![0i64; 10];
        truth.extend([1, 1, 2, 2]);
        let pred = vec![0i64; truth.len()];
        let old: BTreeSet<i64> = [0].into_iter().collect();
        let r = gcd_report(&pred, &truth, &old, None).unwrap();
        assert!((r.acc_all - 10.0 / 14.0).abs() < 1e-12);
        assert!((r.balanced_acc - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.acc_old, Some(1.0));
        assert_eq!(r.acc_new, Some(0.0));
    }

    #[test]
    fn old_new_split_uses_one_global_matching() {
        // Clusters are swapped between an old and a new class; a per-split
        // matching would score both splits 1.0, the global matching cannot.
        let truth = vec![0, 0, 0, 1, 1, 1];
        let pred = vec![1, 1, 0, 0, 0, 1];
        let old: BTreeSet<i64> = [0].into_iter().collect();
        let r = gcd_report(&pred, &truth, &old, None).unwrap();
        let acc_old = r.acc_old.unwrap();
        let acc_new = r.acc_new.unwrap();
        assert!((acc_old + acc_new - 2.0).abs() > 1e-9);
        assert!((r.acc_all - (acc_old + acc_new) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_split_reports_none() {
        let truth = vec![0, 0, 1];
        let pred = vec![0, 0, 1];
        let none_old: BTreeSet<i64> = BTreeSet::new();
        let r = gcd_report(&pred, &truth, &none_old, None).unwrap();
        assert_eq!(r.acc_old, None);
        assert_eq!(r.acc_new, Some(1.0));
    }

    #[test]
    fn lambda_selected_counts_subset_truth() {
        let truth = vec![0, 0, 0, 0, 1, 1, 2];
        let pred = truth.clone();
        let old: BTreeSet<i64> = [0].into_iter().collect();
        let subset = vec![0usize, 1, 2, 3, 4, 5];
        let r = gcd_report(&pred, &truth, &old, Some(&subset)).unwrap();
        // Within the subset: class 0 has 4, class 1 has 2; class 2 absent.
        assert_eq!(r.lambda_selected, Some(2.0));
    }

    #[test]
    fn balanced_acc_bounded_by_per_class_extremes() {
        let truth = vec![0, 0, 0, 1, 1, 2];
        let pred = vec![0, 0, 1, 1, 1, 0];
        let old: BTreeSet<i64> = [0].into_iter().collect();
        let r = gcd_report(&pred, &truth, &old, None).unwrap();
        let max = r.per_class.iter().map(|p| p.acc).fold(0.0, f64::max);
        let min = r.per_class.iter().map(|p| p.acc).fold(1.0, f64::min);
        assert!(r.balanced_acc <= max + 1e-12);
        assert!(r.balanced_acc >= min - 1e-12);
    }
}
