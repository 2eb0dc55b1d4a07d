//! Class-number estimation on the mixed labelled+unlabelled set.
//!
//! Labels are dropped, density peaks found (strict dominance) and suppressed
//! by NMDS; the peak count upper-bounds the class count and the labelled
//! class count lower-bounds it. Candidate counts K cluster the data with the
//! top-K densest peaks as prototypes; the K maximizing Hungarian-matched
//! accuracy on the labelled split wins. The search is Brent-style bracketing
//! on the integer lattice with memoized probes and a hill-climb polish,
//! falling back to an exhaustive scan on small ranges.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::ProbMatrix;
use crate::density::{
    candidates_from, compute_density, find_peaks, nmds_with_graph, DensityMode, NmdsRule, PeakSet,
};
use crate::embedding::{dot, EmbeddingSet, LabelInfo};
use crate::error::{Error, Result};
use crate::evaluation::clustering_acc;
use crate::knn::build_knn;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub k: usize,
    pub k_s: usize,
    pub lambda_nmds: f64,
    #[serde(default)]
    pub nmds_rule: NmdsRule,
    /// Absolute interval width at which the bracketing search stops.
    pub brent_tol: f64,
    /// Range size below which the search scans every candidate instead.
    pub exhaustive_cutoff: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            k: 10,
            k_s: 30,
            lambda_nmds: 0.6,
            nmds_rule: NmdsRule::KeepMax,
            brent_tol: 1.0,
            exhaustive_cutoff: 50,
        }
    }
}

impl EstimationConfig {
    fn validate(&self, n: usize) -> Result<()> {
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
        if !(self.brent_tol > 0.0) {
            return Err(Error::invalid(
                "brent_tol",
                self.brent_tol,
                "tolerance must be positive",
            ));
        }
        if self.exhaustive_cutoff == 0 {
            return Err(Error::invalid(
                "exhaustive_cutoff",
                self.exhaustive_cutoff,
                "cutoff must be >= 1",
            ));
        }
        Ok(())
    }
}

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct EstimationTiming {
    pub knn_s: f64,
    pub density_s: f64,
    pub search_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationReport {
    pub k_hat: usize,
    pub lower: usize,
    pub upper: usize,
    /// Retained peaks after NMDS.
    pub peak_count: usize,
    /// (K, labelled accuracy) in probe order; no K appears twice.
    pub probe_history: Vec<(usize, f64)>,
    /// Cluster id per sample under k_hat prototypes.
    pub assignments: Vec<i64>,
    pub timing: EstimationTiming,
}

/// (lower, upper) class-count bounds: the labelled class count from below,
/// the retained-peak count from above, clamped to a non-empty interval.
pub fn class_bounds(peaks: &PeakSet, k_labelled: usize) -> (usize, usize) {
    let lower = k_labelled.max(1);
    let upper = peaks.len().max(lower);
    (lower, upper)
}

/// Nearest-prototype assignment with the top-K densest peaks as prototypes.
/// Ties go to the lower prototype index (the denser peak).
pub fn assign_to_peaks(
    embeddings: &EmbeddingSet,
    peaks_by_density: &[usize],
    k: usize,
) -> Result<Vec<i64>> {
    if k == 0 {
        return Err(Error::invalid("K", k, "need at least one prototype"));
    }
    if k > peaks_by_density.len() {
        return Err(Error::invalid(
            "K",
            k,
            "more prototypes requested than peaks available",
        ));
    }
    let protos: Vec<&[f64]> = peaks_by_density[..k]
        .iter()
        .map(|&id| {
            if id >= embeddings.n() {
                return Err(Error::invalid("peak id", id, "out of range"));
            }
            Ok(embeddings.row(id))
        })
        .collect::<Result<_>>()?;
    Ok((0..embeddings.n())
        .into_par_iter()
        .map(|i| {
            let h = embeddings.row(i);
            let mut best = 0usize;
            let mut best_sim = f64::NEG_INFINITY;
            for (c, p) in protos.iter().enumerate() {
                let sim = dot(h, p);
                if sim > best_sim {
                    best_sim = sim;
                    best = c;
                }
            }
            best as i64
        })
        .collect())
}

/// Hungarian-matched clustering accuracy restricted to the labelled samples.
pub fn labelled_objective(assignments: &[i64], info: &LabelInfo) -> Result<f64> {
    if assignments.len() != info.n() {
        return Err(Error::Dimension {
            context: "labelled objective",
            expected: info.n(),
            got: assignments.len(),
        });
    }
    let ids = info.labelled_ids();
    if ids.is_empty() {
        return Err(Error::TooFewSamples {
            context: "labelled objective",
            needed: 1,
            got: 0,
        });
    }
    let pred: Vec<i64> = ids.iter().map(|&i| assignments[i]).collect();
    let truth: Vec<i64> = ids.iter().map(|&i| info.labels[i]).collect();
    Ok(clustering_acc(&pred, &truth)?.0)
}

/// Maximizes a memoized objective over the integers [lower, upper].
///
/// Small ranges scan exhaustively. Larger ones run Brent minimization of
/// -f on the real interval with probes rounded to the lattice, then a
/// hill-climb polish so the answer is a lattice local maximum even on
/// plateaued or non-unimodal profiles. Ties resolve to the smallest K.
/// Returns (argmax, probe history in probe order).
pub fn search_max(
    lower: usize,
    upper: usize,
    tol: f64,
    exhaustive_cutoff: usize,
    mut f: impl FnMut(usize) -> Result<f64>,
) -> Result<(usize, Vec<(usize, f64)>)> {
    if lower > upper {
        return Err(Error::invalid("bounds", lower, "lower bound above upper"));
    }
    let mut memo: BTreeMap<usize, f64> = BTreeMap::new();
    let mut history: Vec<(usize, f64)> = Vec::new();
    macro_rules! probe {
        ($k:expr) => {{
            let k: usize = $k;
            match memo.get(&k) {
                Some(&v) => v,
                None => {
                    let v = f(k)?;
                    memo.insert(k, v);
                    history.push((k, v));
                    v
                }
            }
        }};
    }
    let best_of = |memo: &BTreeMap<usize, f64>| -> usize {
        // BTreeMap iterates keys ascending, so strict improvement keeps the
        // smallest K among ties.
        let mut best_k = lower;
        let mut best_v = f64::NEG_INFINITY;
        for (&k, &v) in memo {
            if v > best_v {
                best_v = v;
                best_k = k;
            }
        }
        best_k
    };

    if upper - lower < exhaustive_cutoff {
        for k in lower..=upper {
            probe!(k);
        }
        return Ok((best_of(&memo), history));
    }

    // Brent minimization of g(x) = -f(round(x)) on [lower, upper].
    let golden = 0.381_966_011_250_105_1_f64;
    let (mut a, mut b) = (lower as f64, upper as f64);
    let mut x = a + golden * (b - a);
    let mut w = x;
    let mut v = x;
    let round = |t: f64| -> usize { (t.round() as i64).clamp(lower as i64, upper as i64) as usize };
    let mut fx = -probe!(round(x));
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        if (x - m).abs() + 0.5 * (b - a) <= 2.0 * tol {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol {
            // Parabolic fit through (v, fv), (w, fw), (x, fx).
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < 2.0 * tol || b - u < 2.0 * tol {
                    d = if x < m { tol } else { -tol };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < m { b - x } else { a - x };
            d = golden * e;
        }
        let u = if d.abs() >= tol {
            x + d
        } else if d > 0.0 {
            x + tol
        } else {
            x - tol
        };
        let fu = -probe!(round(u));
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }

    // Lattice polish: walk to a local maximum of the memoized profile.
    probe!(lower);
    probe!(upper);
    let mut best = best_of(&memo);
    for _ in 0..=(upper - lower) {
        if best > lower {
            probe!(best - 1);
        }
        if best < upper {
            probe!(best + 1);
        }
        let next = best_of(&memo);
        if next == best {
            break;
        }
        best = next;
    }
    Ok((best, history))
}

/// Estimates the category count of the mixed set.
///
/// `probs` switches the density between connectivity-affinity (trained
/// classifier available) and plain affinity. The labelled split only steers
/// the search objective; clustering itself never sees labels.
pub fn estimate_k(
    embeddings: &EmbeddingSet,
    info: &LabelInfo,
    probs: Option<&ProbMatrix>,
    cfg: &EstimationConfig,
) -> Result<EstimationReport> {
    cfg.validate(embeddings.n())?;
    if info.n() != embeddings.n() {
        return Err(Error::Dimension {
            context: "estimation labels",
            expected: embeddings.n(),
            got: info.n(),
        });
    }
    let k_labelled = info.k_labelled();
    if k_labelled == 0 {
        return Err(Error::TooFewSamples {
            context: "estimation labelled split",
            needed: 1,
            got: 0,
        });
    }

    let t_start = Instant::now();
    let graph = build_knn(embeddings, cfg.k.max(cfg.k_s))?;
    let knn_s = t_start.elapsed().as_secs_f64();

    let t_density = Instant::now();
    let g_k = graph.truncated(cfg.k)?;
    let mode = if probs.is_some() {
        DensityMode::ConnectivityAffinity
    } else {
        DensityMode::AffinityOnly
    };
    let density = compute_density(&g_k, probs, mode)?;
    let raw_peaks = find_peaks(&density, &g_k, true)?;
    let g_ks = graph.truncated(cfg.k_s)?;
    let peaks = nmds_with_graph(
        &candidates_from(&raw_peaks, &density),
        &g_ks,
        cfg.lambda_nmds,
        cfg.nmds_rule,
    )?;
    let density_s = t_density.elapsed().as_secs_f64();

    let (lower, upper) = class_bounds(&peaks, k_labelled);
    let t_search = Instant::now();
    let available = peaks.len();
    let probe = |k: usize| -> Result<f64> {
        if available == 0 {
            return Ok(0.0);
        }
        let assignments = assign_to_peaks(embeddings, &peaks.peak_ids, k.min(available))?;
        labelled_objective(&assignments, info)
    };

    let (k_hat, probe_history) = if lower == upper {
        let acc = probe(lower)?;
        (lower, vec![(lower, acc)])
    } else {
        search_max(lower, upper, cfg.brent_tol, cfg.exhaustive_cutoff, probe)?
    };
    let search_s = t_search.elapsed().as_secs_f64();

    let assignments = if available == 0 {
        vec![0i64; embeddings.n()]
    } else {
        assign_to_peaks(embeddings, &peaks.peak_ids, k_hat.min(available))?
    };

    Ok(EstimationReport {
        k_hat,
        lower,
        upper,
        peak_count: available,
        probe_history,
        assignments,
        timing: EstimationTiming {
            knn_s,
            density_s,
            search_s,
            total_s: t_start.elapsed().as_secs_f64(),
        },
    })
}
