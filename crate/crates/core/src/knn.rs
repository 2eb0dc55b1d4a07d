//! Exact k-nearest-neighbor graphs by inner product over unit-norm rows.
//!
//! Brute-force all-pairs scan, parallel over query rows. No approximate
//! indexes: density peaks downstream depend on exact neighborhoods.

use std::fs;
use std::io::Read as _;
use std::path::Path;

use rayon::prelude::*;

use crate::embedding::{dot, EmbeddingSet};
use crate::error::{Error, Result};

/// Per-sample ordered neighbor ids (nearest first, self excluded) with the
/// matching affinities. Flat n*k storage.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    n: usize,
    k: usize,
    neighbors: Vec<u32>,
    affinities: Vec<f64>,
}

/// Inner product of rows i and j, clamped to [-1, 1] against rounding
/// overshoot on unit-norm inputs.
pub fn affinity(embeddings: &EmbeddingSet, i: usize, j: usize) -> Result<f64> {
    let n = embeddings.n();
    for id in [i, j] {
        if id >= n {
            return Err(Error::invalid("sample id", id, "out of range"));
        }
    }
    Ok(clamped_dot(embeddings.row(i), embeddings.row(j)))
}

#[inline]
fn clamped_dot(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0)
}

/// Orders candidates best-first: affinity descending, then lower id.
/// Affinities are finite by construction, so the comparison is total.
#[inline]
fn better(a: &(f64, u32), b: &(f64, u32)) -> std::cmp::Ordering {
    b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1))
}

fn top_k_row(embeddings: &EmbeddingSet, i: usize, k: usize) -> Vec<(f64, u32)> {
    let query = embeddings.row(i);
    let mut cand: Vec<(f64, u32)> = (0..embeddings.n())
        .filter(|&j| j != i)
        .map(|j| (clamped_dot(query, embeddings.row(j)), j as u32))
        .collect();
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, better);
        cand.truncate(k);
        // Rows are collected for all n queries; dropping the spare capacity
        // keeps the graph at n*k instead of n^2 memory.
        cand.shrink_to_fit();
    }
    cand.sort_unstable_by(better);
    cand
}

/// Exact top-k neighbors for every sample; ties broken by lower id.
pub fn build_knn(embeddings: &EmbeddingSet, k: usize) -> Result<KnnGraph> {
    let n = embeddings.n();
    if k == 0 {
        return Err(Error::invalid("k", k, "need at least one neighbor"));
    }
    if k >= n {
        return Err(Error::invalid("k", k, "k must be smaller than the sample count"));
    }
    let rows: Vec<Vec<(f64, u32)>> = (0..n)
        .into_par_iter()
        .map(|i| top_k_row(embeddings, i, k))
        .collect();

    let mut neighbors = Vec::with_capacity(n * k);
    let mut affinities = Vec::with_capacity(n * k);
    for row in rows {
        for (a, id) in row {
            neighbors.push(id);
            affinities.push(a);
        }
    }
    Ok(KnnGraph {
        n,
        k,
        neighbors,
        affinities,
    })
}

impl KnnGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Neighbor ids of sample i, nearest first.
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    /// Affinities aligned with [`KnnGraph::neighbors`]; non-increasing.
    pub fn affinities(&self, i: usize) -> &[f64] {
        &self.affinities[i * self.k..(i + 1) * self.k]
    }

    /// Ascending-id copy of a neighbor list, for set operations.
    pub fn neighbor_set(&self, i: usize) -> Vec<u32> {
        let mut ids = self.neighbors(i).to_vec();
        ids.sort_unstable();
        ids
    }

    /// Sub-graph keeping only each sample's `k` nearest neighbors. Exact
    /// because neighbor lists are sorted best-first.
    pub fn truncated(&self, k: usize) -> Result<KnnGraph> {
        if k == 0 || k > self.k {
            return Err(Error::invalid("k", k, "truncation must satisfy 1 <= k <= graph k"));
        }
        if k == self.k {
            return Ok(self.clone());
        }
        let mut neighbors = Vec::with_capacity(self.n * k);
        let mut affinities = Vec::with_capacity(self.n * k);
        for i in 0..self.n {
            neighbors.extend_from_slice(&self.neighbors(i)[..k]);
            affinities.extend_from_slice(&self.affinities(i)[..k]);
        }
        Ok(KnnGraph {
            n: self.n,
            k,
            neighbors,
            affinities,
        })
    }

    /// Cache format: u32-LE n, u32-LE k, then n*k (u32-LE id, f32-LE affinity)
    /// pairs in row order.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 + self.n * self.k * 8);
        bytes.extend_from_slice(&(self.n as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.k as u32).to_le_bytes());
        for (id, aff) in self.neighbors.iter().zip(&self.affinities) {
            bytes.extend_from_slice(&id.to_le_bytes());
            bytes.extend_from_slice(&(*aff as f32).to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_cache(path: &Path) -> Result<KnnGraph> {
        let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut header = [0u8; 8];
        file.read_exact(&mut header)
            .map_err(|e| Error::io(path, e))?;
        let n = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
        let k = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        if n == 0 || k == 0 || k >= n {
            return Err(Error::Cache {
                path: path.to_path_buf(),
                reason: format!("invalid header n={n} k={k}"),
            });
        }
        let mut body = Vec::new();
        file.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
        if body.len() != n * k * 8 {
            return Err(Error::Cache {
                path: path.to_path_buf(),
                reason: format!("expected {} body bytes, found {}", n * k * 8, body.len()),
            });
        }
        let mut neighbors = Vec::with_capacity(n * k);
        let mut affinities = Vec::with_capacity(n * k);
        for (row, pair) in body.chunks_exact(8).enumerate() {
            let id = u32::from_le_bytes(pair[0..4].try_into().unwrap());
            let aff = f32::from_le_bytes(pair[4..8].try_into().unwrap());
            if id as usize >= n {
                return Err(Error::Cache {
                    path: path.to_path_buf(),
                    reason: format!("neighbor id {id} out of range at entry {row}"),
                });
            }
            if !aff.is_finite() {
                return Err(Error::Cache {
                    path: path.to_path_buf(),
                    reason: format!("non-finite affinity at entry {row}"),
                });
            }
            neighbors.push(id);
            affinities.push(aff as f64);
        }
        let graph = KnnGraph {
            n,
            k,
            neighbors,
            affinities,
        };
        for i in 0..n {
            let ids = graph.neighbors(i);
            if ids.contains(&(i as u32)) {
                return Err(Error::Cache {
                    path: path.to_path_buf(),
                    reason: format!("sample {i} lists itself as a neighbor"),
                });
            }
            let mut seen = ids.to_vec();
            seen.sort_unstable();
            if seen.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Cache {
                    path: path.to_path_buf(),
                    reason: format!("duplicate neighbor in row {i}"),
                });
            }
        }
        Ok(graph)
    }
}

/// Exhaustive O(n^2 log n) reference: full sort of every candidate list.
/// Test oracle for [`build_knn`]; exported for the test suites.
pub fn brute_force_knn(embeddings: &EmbeddingSet, k: usize) -> Result<KnnGraph> {
    let n = embeddings.n();
    if k == 0 || k >= n {
        return Err(Error::invalid("k", k, "need 1 <= k < n"));
    }
    let mut neighbors = Vec::with_capacity(n * k);
    let mut affinities = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut cand: Vec<(f64, u32)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (clamped_dot(embeddings.row(i), embeddings.row(j)), j as u32))
            .collect();
        cand.sort_by(better);
        for (a, id) in cand.into_iter().take(k) {
            neighbors.push(id);
            affinities.push(a);
        }
    }
    Ok(KnnGraph {
        n,
        k,
        neighbors,
        affinities,
    })
}
