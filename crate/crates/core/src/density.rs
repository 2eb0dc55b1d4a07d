//! k-NN densities, density peaks, and Non-Maximum Density Suppression.
//!
//! Density of a sample is the neighborhood average of connectivity times
//! affinity (or plain affinity when no class probabilities exist). A peak
//! dominates the density of its whole k-neighborhood; NMDS then drops peaks
//! whose k_s-NN sets overlap a denser peak too much.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::ProbMatrix;
use crate::embedding::{dot, EmbeddingSet};
use crate::error::{Error, Result};
use crate::knn::KnnGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityMode {
    /// d_i = mean over neighbors of (2 <p_i,p_j> - 1) * <h_i,h_j>.
    #[default]
    ConnectivityAffinity,
    /// d_i = mean over neighbors of <h_i,h_j>; used when probabilities are
    /// unavailable or untrusted (untrained classifier).
    AffinityOnly,
}

/// How NMDS resolves an overlapping pair of peaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NmdsRule {
    /// Discard the lower-density member of an overlapping pair (ties: the
    /// higher index is discarded). The suppression orientation that leaves
    /// one dominant prototype per overlap group.
    #[default]
    KeepMax,
    /// Discard a candidate when it is denser than an overlapping candidate,
    /// leaving the least dense member of each overlap chain. Kept for A/B
    /// comparison against the default.
    KeepMin,
}

/// Per-sample densities plus the parameters they were computed with.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    densities: Vec<f64>,
    pub mode: DensityMode,
    pub k: usize,
}

impl DensityMap {
    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn density(&self, i: usize) -> f64 {
        self.densities[i]
    }

    pub fn n(&self) -> usize {
        self.densities.len()
    }
}

/// Peaks retained after NMDS, sorted by density descending (ties by lower
/// id). Densities are aligned with `peak_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakSet {
    pub peak_ids: Vec<usize>,
    pub densities: Vec<f64>,
    pub k_s: usize,
    pub lambda_nmds: f64,
}

impl PeakSet {
    pub fn len(&self) -> usize {
        self.peak_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peak_ids.is_empty()
    }
}

/// Connectivity e_ij = 2 <p_i, p_j> - 1 of two probability vectors.
pub fn connectivity(p_i: &[f64], p_j: &[f64]) -> Result<f64> {
    if p_i.len() != p_j.len() {
        return Err(Error::Dimension {
            context: "connectivity",
            expected: p_i.len(),
            got: p_j.len(),
        });
    }
    for (name, p) in [("p_i", p_i), ("p_j", p_j)] {
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || p.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid(
                name,
                format!("sum={sum:.6}"),
                "not a probability distribution",
            ));
        }
    }
    Ok((2.0 * dot(p_i, p_j) - 1.0).clamp(-1.0, 1.0))
}

/// Densities for every sample from its k-NN list. Connectivity-affinity mode
/// requires a probability row per sample.
pub fn compute_density(
    graph: &KnnGraph,
    probs: Option<&ProbMatrix>,
    mode: DensityMode,
) -> Result<DensityMap> {
    let n = graph.n();
    if mode == DensityMode::ConnectivityAffinity {
        let p = probs.ok_or(Error::invalid(
            "probs",
            "none",
            "connectivity-affinity density needs class probabilities",
        ))?;
        if p.n() != n {
            return Err(Error::Dimension {
                context: "density probabilities",
                expected: n,
                got: p.n(),
            });
        }
    }
    let densities: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ids = graph.neighbors(i);
            let affs = graph.affinities(i);
            let sum: f64 = match (mode, probs) {
                (DensityMode::AffinityOnly, _) => affs.iter().sum(),
                (DensityMode::ConnectivityAffinity, Some(p)) => ids
                    .iter()
                    .zip(affs)
                    .map(|(&j, &a)| {
                        let e = 2.0 * dot(p.row(i), p.row(j as usize)) - 1.0;
                        e.clamp(-1.0, 1.0) * a
                    })
                    .sum(),
                (DensityMode::ConnectivityAffinity, None) => unreachable!(),
            };
            (sum / graph.k() as f64).clamp(-1.0, 1.0)
        })
        .collect();
    Ok(DensityMap {
        densities,
        mode,
        k: graph.k(),
    })
}

/// Samples whose density dominates every neighbor in their k-NN list;
/// `strict` demands d_i > d_j, otherwise d_i >= d_j. Ascending id order.
pub fn find_peaks(density: &DensityMap, graph: &KnnGraph, strict: bool) -> Result<Vec<usize>> {
    if density.n() != graph.n() {
        return Err(Error::Dimension {
            context: "find_peaks",
            expected: graph.n(),
            got: density.n(),
        });
    }
    let d = density.densities();
    Ok((0..graph.n())
        .filter(|&i| {
            graph.neighbors(i).iter().all(|&j| {
                let dj = d[j as usize];
                if strict {
                    d[i] > dj
                } else {
                    d[i] >= dj
                }
            })
        })
        .collect())
}

/// |N_i ∩ N_j| / |N_i ∪ N_j| over the two k_s-NN sets (self-exclusive).
/// Identical ids give 1 by convention.
pub fn iouk(embeddings: &EmbeddingSet, i: usize, j: usize, k_s: usize) -> Result<f64> {
    let n = embeddings.n();
    for id in [i, j] {
        if id >= n {
            return Err(Error::invalid("sample id", id, "out of range"));
        }
    }
    if k_s == 0 || k_s >= n {
        return Err(Error::invalid("k_s", k_s, "need 1 <= k_s < n"));
    }
    if i == j {
        return Ok(1.0);
    }
    let a = knn_set(embeddings, i, k_s);
    let b = knn_set(embeddings, j, k_s);
    Ok(iou_sorted(&a, &b))
}

/// Top-k_s neighbor ids of one sample, ascending. Same affinity ordering and
/// tie rule as the graph builder.
fn knn_set(embeddings: &EmbeddingSet, i: usize, k_s: usize) -> Vec<u32> {
    let query = embeddings.row(i);
    let mut cand: Vec<(f64, u32)> = (0..embeddings.n())
        .filter(|&j| j != i)
        .map(|j| (dot(query, embeddings.row(j)).clamp(-1.0, 1.0), j as u32))
        .collect();
    cand.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut ids: Vec<u32> = cand.into_iter().take(k_s).map(|(_, id)| id).collect();
    ids.sort_unstable();
    ids
}

fn iou_sorted(a: &[u32], b: &[u32]) -> f64 {
    let mut inter = 0usize;
    let (mut x, mut y) = (0usize, 0usize);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                x += 1;
                y += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

fn validate_candidates(candidates: &[(usize, f64)], lambda_nmds: f64) -> Result<()> {
    if !(lambda_nmds > 0.0 && lambda_nmds < 1.0) {
        return Err(Error::invalid(
            "lambda_nmds",
            lambda_nmds,
            "threshold must lie in (0, 1)",
        ));
    }
    let mut seen: Vec<usize> = candidates.iter().map(|&(id, _)| id).collect();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid(
            "candidates",
            "list",
            "duplicate candidate ids",
        ));
    }
    if candidates.iter().any(|&(_, d)| !d.is_finite()) {
        return Err(Error::invalid(
            "candidates",
            "density",
            "non-finite density",
        ));
    }
    Ok(())
}

fn nmds_core(
    candidates: &[(usize, f64)],
    sets: &[Vec<u32>],
    k_s: usize,
    lambda_nmds: f64,
    rule: NmdsRule,
) -> PeakSet {
    let m = candidates.len();
    let mut retained = Vec::with_capacity(m);
    for a in 0..m {
        let (id_a, d_a) = candidates[a];
        let mut discard = false;
        for b in 0..m {
            if a == b {
                continue;
            }
            let (id_b, d_b) = candidates[b];
            let dominated = match rule {
                NmdsRule::KeepMax => d_b > d_a || (d_b == d_a && id_b < id_a),
                NmdsRule::KeepMin => d_a > d_b,
            };
            if dominated && iou_sorted(&sets[a], &sets[b]) > lambda_nmds {
                discard = true;
                break;
            }
        }
        if !discard {
            retained.push((id_a, d_a));
        }
    }
    retained.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    PeakSet {
        peak_ids: retained.iter().map(|&(id, _)| id).collect(),
        densities: retained.iter().map(|&(_, d)| d).collect(),
        k_s,
        lambda_nmds,
    }
}

/// Suppresses overlapping peaks. A candidate is discarded iff some other
/// candidate dominates it under `rule` and their k_s-NN IoU exceeds
/// `lambda_nmds`. Retained peaks come back sorted by density descending.
pub fn nmds(
    candidates: &[(usize, f64)],
    embeddings: &EmbeddingSet,
    k_s: usize,
    lambda_nmds: f64,
    rule: NmdsRule,
) -> Result<PeakSet> {
    validate_candidates(candidates, lambda_nmds)?;
    if k_s == 0 || k_s >= embeddings.n() {
        return Err(Error::invalid("k_s", k_s, "need 1 <= k_s < n"));
    }
    let sets: Vec<Vec<u32>> = candidates
        .par_iter()
        .map(|&(id, _)| {
            if id >= embeddings.n() {
                return Err(Error::invalid("candidate id", id, "out of range"));
            }
            Ok(knn_set(embeddings, id, k_s))
        })
        .collect::<Result<_>>()?;
    Ok(nmds_core(candidates, &sets, k_s, lambda_nmds, rule))
}

/// [`nmds`] reusing an existing k_s-NN graph instead of rescanning rows.
pub fn nmds_with_graph(
    candidates: &[(usize, f64)],
    graph: &KnnGraph,
    lambda_nmds: f64,
    rule: NmdsRule,
) -> Result<PeakSet> {
    validate_candidates(candidates, lambda_nmds)?;
    let sets: Vec<Vec<u32>> = candidates
        .iter()
        .map(|&(id, _)| {
            if id >= graph.n() {
                return Err(Error::invalid("candidate id", id, "out of range"));
            }
            Ok(graph.neighbor_set(id))
        })
        .collect::<Result<_>>()?;
    Ok(nmds_core(candidates, &sets, graph.k(), lambda_nmds, rule))
}

/// Pairs peak ids with their densities, ready for [`nmds`].
pub fn candidates_from(peaks: &[usize], density: &DensityMap) -> Vec<(usize, f64)> {
    peaks.iter().map(|&i| (i, density.density(i))).collect()
}
