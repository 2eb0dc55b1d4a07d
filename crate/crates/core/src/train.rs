//! Prototype training loop: two-view mini-batches, cosine-decayed SGD, and
//! an end-of-epoch selection refresh.
//!
//! The backbone is frozen, so a "view" of a sample is its stored embedding
//! jittered with small Gaussian noise and re-normalized. Labelled batches
//! cycle over D^l; unlabelled batches cycle over the current selected pool
//! (the full unlabelled set at epoch 0). After every epoch the classifier's
//! own predictions drive [`resample_epoch`], which re-draws the pool and the
//! class prior for the next one. All randomness flows from a single seeded
//! stream, so repeated runs are bit-identical.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    grad_prototypes_frozen, loss_representation, teacher_probs, total_loss_frozen, LossWeights,
    PrototypeSet, TrainBatch,
};
use crate::density::{
    candidates_from, compute_density, find_peaks, nmds_with_graph, DensityMode,
};
use crate::embedding::{normalize_in_place, EmbeddingSet, LabelInfo};
use crate::error::{Error, Result};
use crate::knn::{build_knn, KnnGraph};
use crate::selection::{prior_distribution, resample_epoch, SelectionConfig, SelectionResult};

/// Which unlabelled pool feeds training after epoch 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Confidence union density selection with the matching prior.
    #[default]
    Full,
    /// Selection disabled: every epoch trains on the full unlabelled set
    /// with no prior term.
    Baseline,
    /// Density-selected samples only (confidence branch removed).
    NoConf,
    /// Confidence-selected samples only (density branch removed).
    NoDens,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Total prototype count: labelled classes plus novel slots. No usable
    /// default; set it from prior knowledge or an estimate_k run.
    pub k_total: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate; decays to zero on a cosine schedule.
    pub lr: f64,
    /// RMS norm of the per-view Gaussian jitter (zero disables it).
    pub sigma_view: f64,
    /// Student temperature.
    pub tau_s: f64,
    /// Teacher temperature; sharper than the student.
    pub tau_t: f64,
    pub weights: LossWeights,
    /// Supervised-contrastive weight inside the monitored representation
    /// loss. Monitoring only; nothing backpropagates through it.
    pub lambda_rep: f64,
    pub rep_temperature: f64,
    pub selection: SelectionConfig,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k_total: 0,
            epochs: 30,
            batch_size: 128,
            lr: 0.1,
            sigma_view: 0.05,
            tau_s: 0.1,
            tau_t: 0.05,
            weights: LossWeights::default(),
            lambda_rep: 0.35,
            rep_temperature: 0.07,
            selection: SelectionConfig::default(),
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    fn validate(&self, n: usize, k_labelled: usize) -> Result<()> {
        if self.k_total < 2 || self.k_total < k_labelled {
            return Err(Error::invalid(
                "k_total",
                self.k_total,
                "need at least max(2, labelled classes) prototypes",
            ));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", self.epochs, "need at least one"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", self.batch_size, "need at least one"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("lr", self.lr, "learning rate must be positive"));
        }
        if !(self.sigma_view >= 0.0) || !self.sigma_view.is_finite() {
            return Err(Error::invalid(
                "sigma_view",
                self.sigma_view,
                "view noise must be non-negative",
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda_rep) {
            return Err(Error::invalid(
                "lambda_rep",
                self.lambda_rep,
                "weight must lie in [0, 1]",
            ));
        }
        if !(self.rep_temperature > 0.0) {
            return Err(Error::invalid(
                "rep_temperature",
                self.rep_temperature,
                "temperature must be positive",
            ));
        }
        if self.ablation != Ablation::Baseline {
            self.selection.validate(n)?;
        }
        Ok(())
    }
}

/// Per-epoch training record. Losses are means over the epoch's steps;
/// `s_conf`/`s_dens` are the selection sizes whose pool trained this epoch
/// (zero at epoch 0, which runs on the full unlabelled set).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_sup: f64,
    pub loss_unsup: f64,
    pub loss_prior: f64,
    pub loss_rep: f64,
    pub s_conf: usize,
    pub s_dens: usize,
    pub clamp_events: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub prototypes: PrototypeSet,
    pub stats: Vec<EpochStats>,
    /// Selection state after the final epoch; `None` when selection never
    /// ran (baseline ablation or no unlabelled data). For ablations the
    /// union and prior are rewritten to the pool actually used.
    pub selection: Option<SelectionResult>,
}

/// Stable labelled-class indexing: class id -> prototype row, in ascending
/// class-id order. Novel prototypes occupy the remaining high rows.
pub fn label_index_map(info: &LabelInfo) -> BTreeMap<i64, usize> {
    info.old_class_set
        .iter()
        .enumerate()
        .map(|(idx, &class)| (class, idx))
        .collect()
}

/// h + (sigma/sqrt(d)) * gauss, re-normalized. sigma is the RMS norm of the
/// perturbation, so view spread does not scale with dimension.
fn jitter_view(rng: &mut ChaCha8Rng, h: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let scale = sigma / (h.len() as f64).sqrt();
    let mut v: Vec<f64> = h
        .iter()
        .map(|&x| x + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    normalize_in_place(&mut v, 0)?;
    Ok(v)
}

/// Contiguous batch ranges over `len` items. A trailing singleton is merged
/// into its predecessor so batch statistics never rest on one sample.
fn chunk_ranges(len: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + batch_size).min(len);
        out.push((start, end));
        start = end;
    }
    if out.len() > 1 {
        let last = out[out.len() - 1];
        if last.1 - last.0 == 1 {
            out.pop();
            out.last_mut().unwrap().1 = last.1;
        }
    }
    out
}

/// Labelled prototypes are normalized class means; novel slots take the
/// highest-density unlabelled peaks (after suppression) not yet claimed,
/// falling back to the densest remaining unlabelled samples if peaks run
/// out. `graph` must be the k_s-NN graph over all samples.
pub fn init_prototypes(
    embeddings: &EmbeddingSet,
    info: &LabelInfo,
    cfg: &TrainConfig,
    graph: Option<&KnnGraph>,
) -> Result<PrototypeSet> {
    let d = embeddings.d();
    let map = label_index_map(info);
    let k_lab = map.len();
    cfg.validate(embeddings.n(), k_lab)?;

    let mut rows = vec![0.0f64; cfg.k_total * d];
    let mut counts = vec![0usize; k_lab];
    for (i, &label) in info.labels.iter().enumerate() {
        if label < 0 {
            continue;
        }
        let idx = map[&label];
        counts[idx] += 1;
        let row = &mut rows[idx * d..(idx + 1) * d];
        for (r, &x) in row.iter_mut().zip(embeddings.row(i)) {
            *r += x;
        }
    }
    for (idx, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::invalid("labels", idx, "labelled class with no samples"));
        }
        normalize_in_place(&mut rows[idx * d..(idx + 1) * d], idx)?;
    }

    let k_new = cfg.k_total - k_lab;
    if k_new > 0 {
        let unlabelled = info.unlabelled_ids();
        if unlabelled.len() < k_new {
            return Err(Error::TooFewSamples {
                context: "novel prototype init",
                needed: k_new,
                got: unlabelled.len(),
            });
        }
        let graph = graph.ok_or(Error::invalid(
            "graph",
            "none",
            "novel prototype init needs a k-NN graph",
        ))?;
        let dens_graph = graph.truncated(cfg.selection.k)?;
        let density = compute_density(&dens_graph, None, DensityMode::AffinityOnly)?;
        let peaks = find_peaks(&density, &dens_graph, false)?;
        let is_unlabelled: Vec<bool> = info.labels.iter().map(|&l| l < 0).collect();
        let unlab_peaks: Vec<usize> =
            peaks.into_iter().filter(|&i| is_unlabelled[i]).collect();
        let kept = nmds_with_graph(
            &candidates_from(&unlab_peaks, &density),
            graph,
            cfg.selection.lambda_nmds,
            cfg.selection.nmds_rule,
        )?;

        let mut chosen: Vec<usize> = kept.peak_ids.iter().copied().take(k_new).collect();
        if chosen.len() < k_new {
            let mut rest: Vec<usize> = unlabelled
                .iter()
                .copied()
                .filter(|i| !chosen.contains(i))
                .collect();
            rest.sort_by(|&a, &b| {
                density
                    .density(b)
                    .partial_cmp(&density.density(a))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            chosen.extend(rest.into_iter().take(k_new - chosen.len()));
        }
        for (slot, &id) in chosen.iter().enumerate() {
            let idx = k_lab + slot;
            rows[idx * d..(idx + 1) * d].copy_from_slice(embeddings.row(id));
        }
    }

    PrototypeSet::new(rows, cfg.k_total, d, cfg.tau_s, cfg.tau_t)
}

/// Runs the full training loop. Deterministic for a fixed seed; aborts with
/// [`Error::Diverged`] if any loss or gradient goes non-finite.
pub fn train(
    embeddings: &EmbeddingSet,
    info: &LabelInfo,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if info.n() != embeddings.n() {
        return Err(Error::Dimension {
            context: "train labels",
            expected: embeddings.n(),
            got: info.n(),
        });
    }
    let map = label_index_map(info);
    cfg.validate(embeddings.n(), map.len())?;
    let labelled_base = info.labelled_ids();
    if labelled_base.is_empty() {
        return Err(Error::TooFewSamples {
            context: "train labelled split",
            needed: 1,
            got: 0,
        });
    }
    let unlabelled = info.unlabelled_ids();

    // One k_s-NN graph serves prototype init and every selection pass.
    let need_graph = !unlabelled.is_empty()
        && (cfg.k_total > map.len() || cfg.ablation != Ablation::Baseline);
    let graph = if need_graph {
        Some(build_knn(embeddings, cfg.selection.k_s.max(cfg.selection.k))?)
    } else {
        None
    };

    let mut protos = init_prototypes(embeddings, info, cfg, graph.as_ref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut labelled = labelled_base;
    let mut pool = unlabelled.clone();
    let mut prior: Option<Vec<f64>> = None;
    let mut selection: Option<SelectionResult> = None;
    let mut stats = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr * 0.5 * (1.0 + (PI * epoch as f64 / cfg.epochs as f64).cos());
        labelled.shuffle(&mut rng);
        pool.shuffle(&mut rng);

        let chunks_l = chunk_ranges(labelled.len(), cfg.batch_size);
        let chunks_u = chunk_ranges(pool.len(), cfg.batch_size);
        let steps = chunks_l.len().max(chunks_u.len());

        let mut sums = [0.0f64; 4];
        let mut clamps = 0usize;
        for step in 0..steps {
            let (ls, le) = chunks_l[step % chunks_l.len()];
            let batch_l = &labelled[ls..le];
            let batch_u = if chunks_u.is_empty() {
                &[][..]
            } else {
                let (us, ue) = chunks_u[step % chunks_u.len()];
                &pool[us..ue]
            };

            let mut sup_hat = Vec::with_capacity(batch_l.len());
            let mut sup_tilde = Vec::with_capacity(batch_l.len());
            let mut rep_labels = Vec::with_capacity(batch_l.len() + batch_u.len());
            for &i in batch_l {
                sup_hat.push(jitter_view(&mut rng, embeddings.row(i), cfg.sigma_view)?);
                sup_tilde.push(jitter_view(&mut rng, embeddings.row(i), cfg.sigma_view)?);
                rep_labels.push(info.labels[i]);
            }
            let mut unsup_hat = Vec::with_capacity(batch_u.len());
            let mut unsup_tilde = Vec::with_capacity(batch_u.len());
            for &i in batch_u {
                unsup_hat.push(jitter_view(&mut rng, embeddings.row(i), cfg.sigma_view)?);
                unsup_tilde.push(jitter_view(&mut rng, embeddings.row(i), cfg.sigma_view)?);
                rep_labels.push(-1);
            }

            // Both labelled views enter the supervised CE as samples.
            let mut sup_feats = Vec::with_capacity(2 * batch_l.len());
            let mut sup_labels = Vec::with_capacity(2 * batch_l.len());
            for (j, &i) in batch_l.iter().enumerate() {
                let y = map[&info.labels[i]];
                sup_feats.push(sup_hat[j].clone());
                sup_labels.push(y);
                sup_feats.push(sup_tilde[j].clone());
                sup_labels.push(y);
            }

            let rep_hat: Vec<Vec<f64>> =
                sup_hat.iter().chain(&unsup_hat).cloned().collect();
            let rep_tilde: Vec<Vec<f64>> =
                sup_tilde.iter().chain(&unsup_tilde).cloned().collect();
            let loss_rep = loss_representation(
                &rep_hat,
                &rep_tilde,
                Some(&rep_labels),
                cfg.lambda_rep,
                cfg.rep_temperature,
            )?;

            let batch = TrainBatch {
                sup_feats,
                sup_labels,
                unsup_hat,
                unsup_tilde,
            };
            let teacher = teacher_probs(&batch, &protos)?;
            let breakdown =
                total_loss_frozen(&batch, &protos, &cfg.weights, prior.as_deref(), &teacher)?;
            if !breakdown.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("loss became {}", breakdown.total),
                });
            }
            let grad =
                grad_prototypes_frozen(&batch, &protos, &cfg.weights, prior.as_deref(), &teacher)?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    reason: "non-finite prototype gradient".into(),
                });
            }
            protos.apply_step(&grad, lr)?;

            sums[0] += breakdown.sup;
            sums[1] += breakdown.unsup;
            sums[2] += breakdown.prior;
            sums[3] += loss_rep;
            clamps += breakdown.clamp_events;
        }

        let (s_conf, s_dens) = selection
            .as_ref()
            .map_or((0, 0), |s| (s.conf_ids.len(), s.dens_ids.len()));
        let inv = 1.0 / steps as f64;
        stats.push(EpochStats {
            epoch,
            loss_sup: sums[0] * inv,
            loss_unsup: sums[1] * inv,
            loss_prior: sums[2] * inv,
            loss_rep: sums[3] * inv,
            s_conf,
            s_dens,
            clamp_events: clamps,
        });

        if cfg.ablation != Ablation::Baseline && !unlabelled.is_empty() {
            let probs = protos.predict_matrix(embeddings, protos.tau_t)?;
            let mut sel = resample_epoch(
                embeddings,
                info,
                &probs,
                epoch + 1,
                &cfg.selection,
                graph.as_ref(),
            )?;
            if cfg.ablation != Ablation::Full {
                let branch = match cfg.ablation {
                    Ablation::NoConf => sel.dens_ids.clone(),
                    Ablation::NoDens => sel.conf_ids.clone(),
                    _ => unreachable!(),
                };
                let (ids, fallback) = if branch.is_empty() {
                    (unlabelled.clone(), true)
                } else {
                    (branch, false)
                };
                sel.prior =
                    prior_distribution(&probs, &ids, cfg.selection.normalize_counts)?;
                sel.union_ids = ids;
                sel.fallback = fallback;
            }
            pool = sel.union_ids.clone();
            prior = Some(sel.prior.clone());
            selection = Some(sel);
        }
    }

    Ok(TrainOutcome {
        prototypes: protos,
        stats,
        selection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{generate_synthetic, split_labelled, SynthConfig};

    fn mixture(
        k_classes: usize,
        imbalance: f64,
        head_count: usize,
        seed: u64,
    ) -> (EmbeddingSet, LabelInfo) {
        let cfg = SynthConfig {
            k_classes,
            dim: 8,
            imbalance,
            head_count,
            intra_spread: 0.3,
        };
        let (e, truth) = generate_synthetic(&cfg, seed).unwrap();
        let info = split_labelled(&truth.labels, 0.5, 0.5, seed).unwrap();
        (e, info)
    }

    fn toy_config(k_total: usize) -> TrainConfig {
        TrainConfig {
            k_total,
            epochs: 6,
            batch_size: 32,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn supervised_toy_reaches_perfect_accuracy() {
        let cfg = SynthConfig {
            k_classes: 2,
            dim: 8,
            imbalance: 1.0,
            head_count: 20,
            intra_spread: 0.2,
        };
        let (e, truth) = generate_synthetic(&cfg, 11).unwrap();
        let info = split_labelled(&truth.labels, 1.0, 1.0, 11).unwrap();
        assert!(info.unlabelled_ids().is_empty());

        // Full-batch descent with no view noise: the epoch losses are exact
        // objective values, so monotone decrease is assertable strictly.
        let cfg = TrainConfig {
            k_total: 2,
            epochs: 12,
            batch_size: 64,
            lr: 0.05,
            sigma_view: 0.0,
            weights: LossWeights {
                lambda_cls: 1.0,
                eps_entropy: 0.0,
            },
            ablation: Ablation::Baseline,
            ..TrainConfig::default()
        };
        let out = train(&e, &info, &cfg, 3).unwrap();

        for w in out.stats.windows(2).take(9) {
            assert!(
                w[1].loss_sup < w[0].loss_sup,
                "supervised loss rose: {} -> {}",
                w[0].loss_sup,
                w[1].loss_sup
            );
        }
        assert!(out.stats[9].loss_sup < out.stats[0].loss_sup);

        let map = label_index_map(&info);
        let probs = out.prototypes.predict_matrix(&e, cfg.tau_s).unwrap();
        let correct = (0..e.n())
            .filter(|&i| {
                let row = probs.row(i);
                let pred = (0..row.len())
                    .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                    .unwrap();
                pred == map[&info.labels[i]]
            })
            .count();
        assert_eq!(correct, e.n(), "toy training accuracy below 1.0");
    }

    #[test]
    fn fixed_seed_runs_are_bit_identical() {
        let (e, info) = mixture(4, 3.0, 30, 5);
        let cfg = toy_config(4);
        let a = train(&e, &info, &cfg, 7).unwrap();
        let b = train(&e, &info, &cfg, 7).unwrap();
        assert_eq!(a.prototypes.rows(), b.prototypes.rows());
        assert_eq!(a.stats, b.stats);
        assert_eq!(a.selection, b.selection);
        let c = train(&e, &info, &cfg, 8).unwrap();
        assert_ne!(a.prototypes.rows(), c.prototypes.rows());
    }

    #[test]
    fn selection_refresh_populates_pool_and_prior() {
        let (e, info) = mixture(4, 3.0, 30, 5);
        let out = train(&e, &info, &toy_config(4), 7).unwrap();

        assert_eq!(out.stats[0].s_conf, 0);
        assert_eq!(out.stats[0].s_dens, 0);
        // Density peaks always exist, so the pool is live from epoch 1 on.
        assert!(out.stats[1].s_dens > 0);

        let sel = out.selection.expect("selection ran");
        assert!(!sel.union_ids.is_empty());
        assert_eq!(sel.prior.len(), 4);
        let total: f64 = sel.prior.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        let unlab = info.unlabelled_ids();
        assert!(sel.union_ids.iter().all(|i| unlab.contains(i)));
    }

    #[test]
    fn baseline_ablation_never_selects() {
        let (e, info) = mixture(4, 3.0, 30, 5);
        let cfg = TrainConfig {
            ablation: Ablation::Baseline,
            ..toy_config(4)
        };
        let out = train(&e, &info, &cfg, 7).unwrap();
        assert!(out.selection.is_none());
        assert!(out.stats.iter().all(|s| s.s_conf == 0 && s.s_dens == 0));
        assert!(out.stats.iter().all(|s| s.loss_prior == 0.0));
    }

    #[test]
    fn ablation_pools_follow_their_branch() {
        let (e, info) = mixture(4, 3.0, 30, 5);
        let cfg = TrainConfig {
            ablation: Ablation::NoConf,
            ..toy_config(4)
        };
        let out = train(&e, &info, &cfg, 7).unwrap();
        let sel = out.selection.expect("selection ran");
        if !sel.fallback {
            assert_eq!(sel.union_ids, sel.dens_ids);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let (e, info) = mixture(4, 3.0, 30, 5);
        assert!(train(&e, &info, &toy_config(1), 7).is_err());
        let cfg = TrainConfig {
            epochs: 0,
            ..toy_config(4)
        };
        assert!(train(&e, &info, &cfg, 7).is_err());
        let cfg = TrainConfig {
            lr: 0.0,
            ..toy_config(4)
        };
        assert!(train(&e, &info, &cfg, 7).is_err());

        let all_unlabelled =
            LabelInfo::from_labels(vec![-1; e.n()], Some(info.true_labels.clone().unwrap()))
                .unwrap();
        assert!(train(&e, &all_unlabelled, &toy_config(4), 7).is_err());
    }

    #[test]
    fn prototype_init_places_novel_slots_on_peaks() {
        let (e, info) = mixture(4, 3.0, 30, 5);
        let cfg = toy_config(4);
        let graph = build_knn(&e, cfg.selection.k_s).unwrap();
        let protos = init_prototypes(&e, &info, &cfg, Some(&graph)).unwrap();
        assert_eq!(protos.k(), 4);

        // Labelled rows are unit-norm class means.
        let map = label_index_map(&info);
        for (&class, &idx) in &map {
            let d = e.d();
            let mut mean = vec![0.0; d];
            let mut count = 0.0;
            for (i, &l) in info.labels.iter().enumerate() {
                if l == class {
                    for (m, &x) in mean.iter_mut().zip(e.row(i)) {
                        *m += x;
                    }
                    count += 1.0;
                }
            }
            let norm: f64 = mean.iter().map(|&x| x * x).sum::<f64>().sqrt();
            assert!(count > 0.0 && norm > 0.0);
            for (a, &m) in protos.row(idx).iter().zip(&mean) {
                assert!((a - m / norm).abs() < 1e-12);
            }
        }
        // Novel rows coincide with stored unlabelled embeddings.
        let unlab = info.unlabelled_ids();
        for idx in map.len()..4 {
            let row = protos.row(idx);
            assert!(
                unlab.iter().any(|&i| e
                    .row(i)
                    .iter()
                    .zip(row)
                    .all(|(&a, &b)| (a - b).abs() < 1e-12)),
                "novel prototype {idx} is not an unlabelled sample"
            );
        }
    }

    #[test]
    fn merged_tail_chunk_never_leaves_a_singleton() {
        assert_eq!(chunk_ranges(0, 4), vec![]);
        assert_eq!(chunk_ranges(3, 4), vec![(0, 3)]);
        assert_eq!(chunk_ranges(8, 4), vec![(0, 4), (4, 8)]);
        assert_eq!(chunk_ranges(9, 4), vec![(0, 4), (4, 9)]);
        assert_eq!(chunk_ranges(1, 4), vec![(0, 1)]);
    }

    #[test]
    fn cosine_schedule_starts_at_lr_and_decays() {
        let (e, info) = mixture(4, 3.0, 30, 5);
        let cfg = toy_config(4);
        // Indirect check: training with lr so small that prototypes barely
        // move keeps the loss near its initial value, while the real lr
        // moves it. Guards against a schedule that zeroes the first epoch.
        let frozen = TrainConfig {
            lr: 1e-12,
            ..cfg.clone()
        };
        let a = train(&e, &info, &cfg, 7).unwrap();
        let b = train(&e, &info, &frozen, 7).unwrap();
        let drop_a = b.stats[0].loss_sup - a.stats.last().unwrap().loss_sup;
        let drop_b = b.stats[0].loss_sup - b.stats.last().unwrap().loss_sup;
        assert!(drop_a > drop_b + 1e-3, "real lr should move the loss");
    }
}
