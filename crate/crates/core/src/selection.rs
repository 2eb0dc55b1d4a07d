//! Reliable-sample selection: confidence thresholding, density peaks with
//! NMDS, their union, and the pseudo-label prior distribution that
//! regularizes training.
//!
//! Selection runs at epoch end on a frozen model snapshot; the produced
//! union defines the unlabelled pool of the next epoch.

use serde::{Deserialize, Serialize};

use crate::classifier::{softmax, ProbMatrix};
use crate::density::{
    candidates_from, compute_density, find_peaks, nmds_with_graph, DensityMode, NmdsRule,
};
use crate::embedding::{EmbeddingSet, LabelInfo};
use crate::error::{Error, Result};
use crate::knn::{build_knn, KnnGraph};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Confidence threshold on the max teacher-probability.
    pub epsilon_conf: f64,
    /// Density neighborhood size.
    pub k: usize,
    /// IoU neighborhood size for NMDS.
    pub k_s: usize,
    /// IoU threshold above which an overlapping pair is suppressed.
    pub lambda_nmds: f64,
    #[serde(default)]
    pub nmds_rule: NmdsRule,
    #[serde(default)]
    pub density_mode: DensityMode,
    /// Divide pseudo-label counts by |S| before the prior softmax. The raw
    /// count form saturates to near-one-hot at realistic subset sizes.
    pub normalize_counts: bool,
    /// Per-class threshold shaping: eps_k = eps * (freq_k/max_freq)^power.
    /// None keeps the uniform threshold.
    pub crest_power: Option<f64>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            epsilon_conf: 0.8,
            k: 10,
            k_s: 30,
            lambda_nmds: 0.6,
            nmds_rule: NmdsRule::KeepMax,
            density_mode: DensityMode::ConnectivityAffinity,
            normalize_counts: true,
            crest_power: None,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.epsilon_conf > 0.0 && self.epsilon_conf <= 1.0) {
            return Err(Error::invalid(
                "epsilon_conf",
                self.epsilon_conf,
                "threshold must lie in (0, 1]",
            ));
        }
        for (name, v) in [("k", self.k), ("k_s", self.k_s)] {
            if v == 0 || v >= n {
                return Err(Error::invalid(name, v, "need 1 <= value < n"));
            }
        }
        if !(self.lambda_nmds > 0.0 && self.lambda_nmds < 1.0) {
            return Err(Error::invalid(
                "lambda_nmds",
                self.lambda_nmds,
                "threshold must lie in (0, 1)",
            ));
        }
        if let Some(p) = self.crest_power {
            if !(p >= 0.0) {
                return Err(Error::invalid("crest_power", p, "exponent must be >= 0"));
            }
        }
        Ok(())
    }
}

/// One epoch's selection. `union_ids` is the training pool for the next
/// epoch; `fallback` flags that the union was empty and the full unlabelled
/// set was substituted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub epoch: usize,
    pub conf_ids: Vec<usize>,
    pub dens_ids: Vec<usize>,
    pub union_ids: Vec<usize>,
    pub prior: Vec<f64>,
    pub fallback: bool,
}

/// Ids whose maximum class probability reaches the threshold. Preserves the
/// order of `ids`.
pub fn select_confident(probs: &ProbMatrix, ids: &[usize], epsilon_conf: f64) -> Result<Vec<usize>> {
    if !(epsilon_conf > 0.0 && epsilon_conf <= 1.0) {
        return Err(Error::invalid(
            "epsilon_conf",
            epsilon_conf,
            "threshold must lie in (0, 1]",
        ));
    }
    Ok(ids
        .iter()
        .copied()
        .filter(|&i| max_entry(probs.row(i)) >= epsilon_conf)
        .collect())
}

/// Per-class variant: a sample passes against the threshold of its
/// pseudo-label class.
pub fn select_confident_per_class(
    probs: &ProbMatrix,
    ids: &[usize],
    thresholds: &[f64],
) -> Result<Vec<usize>> {
    if thresholds.len() != probs.k() {
        return Err(Error::Dimension {
            context: "per-class thresholds",
            expected: probs.k(),
            got: thresholds.len(),
        });
    }
    Ok(ids
        .iter()
        .copied()
        .filter(|&i| {
            let row = probs.row(i);
            let y = argmax(row);
            row[y] >= thresholds[y]
        })
        .collect())
}

fn max_entry(row: &[f64]) -> f64 {
    row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// CReST-style thresholds: base * (freq_k / max_freq)^power, so rarer
/// pseudo-classes admit samples at lower confidence. power = 0 recovers the
/// uniform base threshold.
pub fn crest_thresholds(base_eps: f64, pseudo_counts: &[usize], power: f64) -> Result<Vec<f64>> {
    if !(base_eps > 0.0 && base_eps <= 1.0) {
        return Err(Error::invalid("base_eps", base_eps, "threshold must lie in (0, 1]"));
    }
    if !(power >= 0.0) {
        return Err(Error::invalid("power", power, "exponent must be >= 0"));
    }
    let max = *pseudo_counts.iter().max().unwrap_or(&0);
    if max == 0 {
        return Err(Error::invalid(
            "pseudo_counts",
            "all zero",
            "need at least one pseudo-labelled sample",
        ));
    }
    Ok(pseudo_counts
        .iter()
        .map(|&c| base_eps * (c as f64 / max as f64).powf(power))
        .collect())
}

/// Density-peak selection: peaks over the full graph (non-strict), restricted
/// to the given unlabelled ids, then NMDS. Returns retained ids sorted by
/// density descending.
pub fn select_density(
    embeddings: &EmbeddingSet,
    probs: Option<&ProbMatrix>,
    unlabelled_ids: &[usize],
    cfg: &SelectionConfig,
) -> Result<Vec<usize>> {
    cfg.validate(embeddings.n())?;
    let graph = build_knn(embeddings, cfg.k.max(cfg.k_s))?;
    select_density_with_graph(embeddings, probs, unlabelled_ids, &graph, cfg)
}

/// [`select_density`] against a prebuilt graph with at least max(k, k_s)
/// neighbors per sample.
pub fn select_density_with_graph(
    embeddings: &EmbeddingSet,
    probs: Option<&ProbMatrix>,
    unlabelled_ids: &[usize],
    graph: &KnnGraph,
    cfg: &SelectionConfig,
) -> Result<Vec<usize>> {
    cfg.validate(embeddings.n())?;
    if graph.k() < cfg.k.max(cfg.k_s) {
        return Err(Error::invalid(
            "graph",
            graph.k(),
            "graph must hold at least max(k, k_s) neighbors",
        ));
    }
    if unlabelled_ids.is_empty() {
        return Ok(Vec::new());
    }
    let g_k = graph.truncated(cfg.k)?;
    let density = compute_density(&g_k, probs, cfg.density_mode)?;
    let peaks = find_peaks(&density, &g_k, false)?;
    let mask: std::collections::BTreeSet<usize> = unlabelled_ids.iter().copied().collect();
    let unlabelled_peaks: Vec<usize> = peaks.into_iter().filter(|i| mask.contains(i)).collect();
    let cands = candidates_from(&unlabelled_peaks, &density);
    let kept = if graph.k() == cfg.k_s {
        nmds_with_graph(&cands, graph, cfg.lambda_nmds, cfg.nmds_rule)?
    } else {
        let g_ks = graph.truncated(cfg.k_s)?;
        nmds_with_graph(&cands, &g_ks, cfg.lambda_nmds, cfg.nmds_rule)?
    };
    Ok(kept.peak_ids)
}

/// Sorted, deduplicated union of the two id lists.
pub fn combine(conf_ids: &[usize], dens_ids: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = conf_ids.iter().chain(dens_ids).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Pseudo-label distribution of the selected subset: hard argmax labels are
/// counted and passed through a softmax, dividing by |S| first unless
/// `normalize_counts` is off.
pub fn prior_distribution(
    probs: &ProbMatrix,
    selected_ids: &[usize],
    normalize_counts: bool,
) -> Result<Vec<f64>> {
    if selected_ids.is_empty() {
        return Err(Error::TooFewSamples {
            context: "prior distribution",
            needed: 1,
            got: 0,
        });
    }
    let mut counts = vec![0.0f64; probs.k()];
    for &i in selected_ids {
        if i >= probs.n() {
            return Err(Error::invalid("selected id", i, "out of range"));
        }
        counts[argmax(probs.row(i))] += 1.0;
    }
    if normalize_counts {
        let total = selected_ids.len() as f64;
        for c in counts.iter_mut() {
            *c /= total;
        }
    }
    Ok(softmax(&counts))
}

/// End-of-epoch selection pass over a frozen model snapshot. `probs` are the
/// teacher-temperature predictions for all samples. An empty union falls
/// back to the full unlabelled set with the `fallback` flag raised.
pub fn resample_epoch(
    embeddings: &EmbeddingSet,
    info: &LabelInfo,
    probs: &ProbMatrix,
    epoch: usize,
    cfg: &SelectionConfig,
    graph: Option<&KnnGraph>,
) -> Result<SelectionResult> {
    cfg.validate(embeddings.n())?;
    if probs.n() != embeddings.n() {
        return Err(Error::Dimension {
            context: "selection probabilities",
            expected: embeddings.n(),
            got: probs.n(),
        });
    }
    let unlabelled = info.unlabelled_ids();
    if unlabelled.is_empty() {
        return Err(Error::TooFewSamples {
            context: "selection pool",
            needed: 1,
            got: 0,
        });
    }

    let conf_ids = match cfg.crest_power {
        None => select_confident(probs, &unlabelled, cfg.epsilon_conf)?,
        Some(power) => {
            let mut pseudo = vec![0usize; probs.k()];
            for &i in &unlabelled {
                pseudo[argmax(probs.row(i))] += 1;
            }
            let thresholds = crest_thresholds(cfg.epsilon_conf, &pseudo, power)?;
            select_confident_per_class(probs, &unlabelled, &thresholds)?
        }
    };

    let density_probs = match cfg.density_mode {
        DensityMode::ConnectivityAffinity => Some(probs),
        DensityMode::AffinityOnly => None,
    };
    let dens_ids = match graph {
        Some(g) => select_density_with_graph(embeddings, density_probs, &unlabelled, g, cfg)?,
        None => select_density(embeddings, density_probs, &unlabelled, cfg)?,
    };

    let mut union_ids = combine(&conf_ids, &dens_ids);
    let fallback = union_ids.is_empty();
    if fallback {
        union_ids = unlabelled;
    }
    let prior = prior_distribution(probs, &union_ids, cfg.normalize_counts)?;
    Ok(SelectionResult {
        epoch,
        conf_ids,
        dens_ids,
        union_ids,
        prior,
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{generate_synthetic, split_labelled, SynthConfig};

    fn probs_from_rows(rows: Vec<Vec<f64>>) -> ProbMatrix {
        let n = rows.len();
        let k = rows[0].len();
        ProbMatrix::new(rows.into_iter().flatten().collect(), n, k, 0.05).unwrap()
    }

    #[test]
    fn confident_selection_thresholds() {
        let p = probs_from_rows(vec![
            vec![1.0, 0.0],
            vec![0.85, 0.15],
            vec![0.5, 0.5],
            vec![0.2, 0.8],
        ]);
        let ids = vec![0, 1, 2, 3];
        assert_eq!(select_confident(&p, &ids, 0.8).unwrap(), vec![0, 1, 3]);
        assert_eq!(select_confident(&p, &ids, 1.0).unwrap(), vec![0]);
        // One-hot rows pass any valid threshold; uniform rows fail 0.8.
        let uniform = probs_from_rows(vec![vec![0.1; 10]; 3]);
        assert!(select_confident(&uniform, &[0, 1, 2], 0.8).unwrap().is_empty());
        assert!(select_confident(&p, &ids, 0.0).is_err());
    }

    #[test]
    fn confidence_is_monotone_in_epsilon() {
        let p = probs_from_rows(vec![
            vec![0.9, 0.1],
            vec![0.7, 0.3],
            vec![0.6, 0.4],
            vec![0.95, 0.05],
        ]);
        let ids = vec![0, 1, 2, 3];
        let mut last = usize::MAX;
        for eps in [0.5, 0.65, 0.8, 0.92, 1.0] {
            let picked = select_confident(&p, &ids, eps).unwrap().len();
            assert!(picked <= last, "eps={eps}");
            last = picked;
        }
    }

    #[test]
    fn crest_threshold_closed_forms() {
        let t = crest_thresholds(0.8, &[100, 10], 1.0).unwrap();
        assert!((t[0] - 0.8).abs() < 1e-12);
        assert!((t[1] - 0.08).abs() < 1e-12);

        let t = crest_thresholds(0.8, &[3, 9, 1], 0.0).unwrap();
        assert_eq!(t, vec![0.8, 0.8, 0.8]);

        assert!(crest_thresholds(0.8, &[0, 0], 1.0).is_err());
    }

    #[test]
    fn crest_admits_at_least_uniform_on_tail() {
        // Tail class confidence 0.5 < 0.8 base: only the shaped threshold
        // admits it.
        let p = probs_from_rows(vec![
            vec![0.9, 0.1],
            vec![0.9, 0.1],
            vec![0.9, 0.1],
            vec![0.9, 0.1],
            vec![0.4, 0.6],
        ]);
        let ids = vec![0, 1, 2, 3, 4];
        let uniform = select_confident(&p, &ids, 0.8).unwrap();
        let pseudo = vec![4usize, 1];
        let shaped = select_confident_per_class(
            &p,
            &ids,
            &crest_thresholds(0.8, &pseudo, 1.0).unwrap(),
        )
        .unwrap();
        assert!(shaped.len() >= uniform.len());
        assert!(shaped.contains(&4));
        assert!(!uniform.contains(&4));
    }

    #[test]
    fn combine_is_set_union() {
        assert_eq!(combine(&[1, 2], &[2, 3]), vec![1, 2, 3]);
        assert_eq!(combine(&[], &[5]), vec![5]);
        assert_eq!(combine(&[4], &[]), vec![4]);
        assert_eq!(combine(&[3, 1], &[1, 3]), vec![1, 3]);
        // Commutative and idempotent.
        assert_eq!(combine(&[7, 9], &[8]), combine(&[8], &[7, 9]));
        let u = combine(&[2, 6], &[6]);
        assert_eq!(combine(&u, &u), u);
    }

    #[test]
    fn prior_distribution_closed_forms() {
        // All selected pseudo-labelled class 0, K=2: softmax([1, 0]).
        let p = probs_from_rows(vec![vec![0.9, 0.1]; 4]);
        let prior = prior_distribution(&p, &[0, 1, 2, 3], true).unwrap();
        let e = std::f64::consts::E;
        assert!((prior[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((prior[1] - 1.0 / (e + 1.0)).abs() < 1e-12);

        // counts [30, 10] over |S| = 40: softmax([0.75, 0.25]).
        let mut rows = vec![vec![0.9, 0.1]; 30];
        rows.extend(vec![vec![0.1, 0.9]; 10]);
        let p = probs_from_rows(rows);
        let ids: Vec<usize> = (0..40).collect();
        let prior = prior_distribution(&p, &ids, true).unwrap();
        let expect = softmax(&[0.75, 0.25]);
        assert!((prior[0] - expect[0]).abs() < 1e-12);
        assert!((prior[0] - 0.6224593312018546).abs() < 1e-9);

        // Equal pseudo-counts: uniform prior.
        let mut rows = vec![vec![0.9, 0.1]; 5];
        rows.extend(vec![vec![0.1, 0.9]; 5]);
        let p = probs_from_rows(rows);
        let ids: Vec<usize> = (0..10).collect();
        let prior = prior_distribution(&p, &ids, true).unwrap();
        assert!((prior[0] - 0.5).abs() < 1e-12);

        // Raw-count mode saturates versus the normalized form.
        let raw = prior_distribution(&p, &ids, false).unwrap();
        assert!((raw[0] - 0.5).abs() < 1e-12, "balanced counts stay uniform");
        assert!(prior_distribution(&p, &[], true).is_err());
    }

    #[test]
    fn prior_is_permutation_equivariant() {
        let rows = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.6, 0.3, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.2, 0.1, 0.7],
            vec![0.15, 0.05, 0.8],
        ];
        let swapped: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| vec![r[2], r[0], r[1]])
            .collect();
        let ids: Vec<usize> = (0..5).collect();
        let a = prior_distribution(&probs_from_rows(rows), &ids, true).unwrap();
        let b = prior_distribution(&probs_from_rows(swapped), &ids, true).unwrap();
        assert!((a[0] - b[1]).abs() < 1e-12);
        assert!((a[1] - b[2]).abs() < 1e-12);
        assert!((a[2] - b[0]).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_yields_single_density_pick() {
        let cfg = SynthConfig {
            k_classes: 2,
            dim: 8,
            imbalance: 1.0,
            head_count: 40,
            intra_spread: 0.03,
        };
        let (e, info) = generate_synthetic(&cfg, 19).unwrap();
        // Keep only class 0 samples as the unlabelled pool; class 1 far away
        // plays the labelled anchor role.
        let truth = info.true_labels.as_ref().unwrap();
        let unlabelled: Vec<usize> = (0..e.n()).filter(|&i| truth[i] == 0).collect();
        let sel_cfg = SelectionConfig {
            k: 8,
            k_s: 20,
            density_mode: DensityMode::AffinityOnly,
            ..Default::default()
        };
        let picked = select_density(&e, None, &unlabelled, &sel_cfg).unwrap();
        assert_eq!(picked.len(), 1, "one tight cluster, one survivor");
        assert!(unlabelled.contains(&picked[0]));
    }

    #[test]
    fn density_selection_flattens_imbalance() {
        let cfg = SynthConfig {
            k_classes: 20,
            dim: 32,
            imbalance: 10.0,
            head_count: 100,
            intra_spread: 0.08,
        };
        let (e, info) = generate_synthetic(&cfg, 23).unwrap();
        let truth = info.true_labels.as_ref().unwrap();
        let split = split_labelled(truth, 0.5, 0.5, 23).unwrap();
        let unlabelled = split.unlabelled_ids();
        let sel_cfg = SelectionConfig {
            density_mode: DensityMode::AffinityOnly,
            ..Default::default()
        };
        let picked = select_density(&e, None, &unlabelled, &sel_cfg).unwrap();
        assert!(!picked.is_empty());

        let picked_truth: Vec<i64> = picked.iter().map(|&i| truth[i]).collect();
        let lam_picked = crate::embedding::imbalance_factor(
            &crate::embedding::ClassCounts::from_labels(&picked_truth).unwrap(),
        );
        let pool_truth: Vec<i64> = unlabelled.iter().map(|&i| truth[i]).collect();
        let lam_pool = crate::embedding::imbalance_factor(
            &crate::embedding::ClassCounts::from_labels(&pool_truth).unwrap(),
        );
        assert!(
            lam_picked < lam_pool,
            "selected {lam_picked} vs pool {lam_pool}"
        );
    }

    #[test]
    fn resample_is_deterministic_and_falls_back() {
        // Arc of five near-identical points; index 2 (the center) is
        // labelled and is the only density peak. Confidence never reaches
        // 0.8, so the union is empty and the fallback must trigger.
        let rows: Vec<Vec<f64>> = [-10.0f64, -5.0, 0.0, 5.0, 10.0]
            .iter()
            .map(|deg| {
                let r = deg.to_radians();
                vec![r.cos(), r.sin()]
            })
            .collect();
        let e = EmbeddingSet::from_rows(&rows).unwrap();
        let info = LabelInfo::from_labels(vec![-1, -1, 0, -1, -1], None).unwrap();
        let probs = probs_from_rows(vec![vec![0.7, 0.3]; 5]);
        let cfg = SelectionConfig {
            k: 4,
            k_s: 4,
            ..Default::default()
        };
        let a = resample_epoch(&e, &info, &probs, 3, &cfg, None).unwrap();
        assert!(a.conf_ids.is_empty());
        assert!(a.dens_ids.is_empty());
        assert!(a.fallback);
        assert_eq!(a.union_ids, info.unlabelled_ids());
        assert_eq!(a.epoch, 3);

        let b = resample_epoch(&e, &info, &probs, 3, &cfg, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resample_epoch_zero_composition() {
        let cfg = SynthConfig {
            k_classes: 5,
            dim: 16,
            imbalance: 4.0,
            head_count: 60,
            intra_spread: 0.06,
        };
        let (e, info) = generate_synthetic(&cfg, 29).unwrap();
        let truth = info.true_labels.as_ref().unwrap();
        let split = split_labelled(truth, 0.6, 0.5, 29).unwrap();
        // Near-uniform probabilities: confidence path empty, density path
        // still proposes peaks (affinity-only mode sidesteps the flat
        // connectivity term).
        let jitter = |i: usize| 1e-4 * (i % 3) as f64;
        let rows: Vec<Vec<f64>> = (0..e.n())
            .map(|i| {
                let mut r = vec![(1.0 - jitter(i)) / 5.0; 5];
                r[0] += jitter(i);
                r
            })
            .collect();
        let probs = probs_from_rows(rows);
        let cfg = SelectionConfig {
            density_mode: DensityMode::AffinityOnly,
            k_s: 25,
            ..Default::default()
        };
        let sel = resample_epoch(&e, &split, &probs, 0, &cfg, None).unwrap();
        assert!(sel.conf_ids.is_empty());
        assert!(!sel.dens_ids.is_empty());
        assert!(!sel.fallback);
        assert_eq!(sel.union_ids, {
            let mut d = sel.dens_ids.clone();
            d.sort_unstable();
            d
        });
        let sum: f64 = sel.prior.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(sel.prior.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn selection_result_json_roundtrip() {
        let r = SelectionResult {
            epoch: 7,
            conf_ids: vec![1, 4],
            dens_ids: vec![4, 9],
            union_ids: vec![1, 4, 9],
            prior: vec![0.6, 0.4],
            fallback: false,
        };
        let json = serde_json::to_string(&r).unwrap();
        let back: SelectionResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert!(json.contains("\"union_ids\""));
        assert!(json.contains("\"fallback\""));
    }
}
