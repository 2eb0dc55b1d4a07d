//! Embedding storage, dataset I/O, synthetic long-tailed generation, and
//! labelled/unlabelled splitting.
//!
//! All in-memory math is f64; the on-disk matrix format is little-endian f32.
//! Rows are L2-normalized on ingestion, so inner products are cosines.

use std::collections::BTreeSet;
use std::fs;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel label for unlabelled samples.
pub const UNLABELLED: i64 = -1;

/// Row-major n x d matrix of unit-norm feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl EmbeddingSet {
    /// Wraps a row-major buffer. Entries must be finite; rows are NOT
    /// normalized here, call [`EmbeddingSet::normalize`] after construction.
    pub fn new(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", n, "need at least one sample"));
        }
        if d < 2 {
            return Err(Error::invalid("d", d, "need dimension >= 2"));
        }
        if data.len() != n * d {
            return Err(Error::Dimension {
                context: "embedding buffer",
                expected: n * d,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "data",
                format!("entry {pos}"),
                "non-finite value",
            ));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::Dimension {
                    context: "embedding row",
                    expected: d,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(data, n, d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Inner product of rows i and j; the affinity a_ij on normalized data.
    pub fn dot(&self, i: usize, j: usize) -> f64 {
        dot(self.row(i), self.row(j))
    }

    /// L2-normalizes every row in place. Returns the largest absolute change
    /// to any entry, which is ~0 when rows were already normalized.
    pub fn normalize(&mut self) -> Result<f64> {
        let mut max_delta = 0.0f64;
        for i in 0..self.n {
            let row = &mut self.data[i * self.d..(i + 1) * self.d];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-300 {
                return Err(Error::ZeroNorm { index: i, norm });
            }
            for v in row.iter_mut() {
                let new = *v / norm;
                max_delta = max_delta.max((new - *v).abs());
                *v = new;
            }
        }
        Ok(max_delta)
    }

    /// True when every row norm is within `tol` of 1.
    pub fn is_unit_norm(&self, tol: f64) -> bool {
        (0..self.n).all(|i| {
            let norm = self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm - 1.0).abs() <= tol
        })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalizes a vector in place; errors on (near-)zero input.
pub fn normalize_in_place(v: &mut [f64], index: usize) -> Result<()> {
    let norm = dot(v, v).sqrt();
    if norm < 1e-300 {
        return Err(Error::ZeroNorm { index, norm });
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Ok(())
}

/// Per-sample labels with split bookkeeping. `labels[i] == UNLABELLED` marks
/// membership in D^u; labelled ids all belong to `old_class_set`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelInfo {
    pub labels: Vec<i64>,
    pub old_class_set: BTreeSet<i64>,
    pub true_labels: Option<Vec<i64>>,
}

impl LabelInfo {
    pub fn from_labels(labels: Vec<i64>, true_labels: Option<Vec<i64>>) -> Result<Self> {
        for (i, &l) in labels.iter().enumerate() {
            if l < UNLABELLED {
                return Err(Error::invalid(
                    "labels",
                    format!("labels[{i}]={l}"),
                    "class ids must be >= 0, or -1 for unlabelled",
                ));
            }
        }
        if let Some(t) = &true_labels {
            if t.len() != labels.len() {
                return Err(Error::Dimension {
                    context: "true labels",
                    expected: labels.len(),
                    got: t.len(),
                });
            }
            if let Some(pos) = t.iter().position(|&l| l < 0) {
                return Err(Error::invalid(
                    "true_labels",
                    format!("true_labels[{pos}]"),
                    "ground truth must not contain the unlabelled sentinel",
                ));
            }
        }
        let old_class_set: BTreeSet<i64> = labels.iter().copied().filter(|&l| l >= 0).collect();
        Ok(Self {
            labels,
            old_class_set,
            true_labels,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// |Y_l|, the number of classes seen in the labelled split.
    pub fn k_labelled(&self) -> usize {
        self.old_class_set.len()
    }

    pub fn labelled_ids(&self) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] >= 0)
            .collect()
    }

    pub fn unlabelled_ids(&self) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == UNLABELLED)
            .collect()
    }
}

/// Per-class sample counts, sorted descending, so counts[0] is the head
/// class and the imbalance ratio is counts.first / counts.last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCounts {
    counts: Vec<usize>,
}

impl ClassCounts {
    pub fn new(mut counts: Vec<usize>) -> Result<Self> {
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::invalid("counts", 0, "class counts must be positive"));
        }
        counts.sort_unstable_by(|a, b| b.cmp(a));
        Ok(Self { counts })
    }

    /// Counts classes that actually occur (ids >= 0); the sentinel is skipped.
    pub fn from_labels(labels: &[i64]) -> Result<Self> {
        let mut by_class = std::collections::BTreeMap::new();
        for &l in labels.iter().filter(|&&l| l >= 0) {
            *by_class.entry(l).or_insert(0usize) += 1;
        }
        if by_class.is_empty() {
            return Err(Error::invalid(
                "labels",
                "[]",
                "no labelled samples to count",
            ));
        }
        Self::new(by_class.into_values().collect())
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Imbalance ratio N_1 / N_K over the sorted class counts.
pub fn imbalance_factor(counts: &ClassCounts) -> f64 {
    let c = counts.counts();
    c[0] as f64 / c[c.len() - 1] as f64
}

/// Synthetic long-tailed mixture parameters. Class k (1-based) receives
/// round(head_count * imbalance^(-(k-1)/(K-1))) samples, a geometric decay
/// hitting N_1/N_K = imbalance exactly at the endpoints.
///
/// `intra_spread` is the RMS norm of the Gaussian perturbation around each
/// class mean (per-coordinate std is intra_spread/sqrt(dim)), so the cluster
/// geometry does not change with the embedding dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub k_classes: usize,
    pub dim: usize,
    pub imbalance: f64,
    pub head_count: usize,
    pub intra_spread: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            k_classes: 20,
            dim: 32,
            imbalance: 10.0,
            head_count: 200,
            intra_spread: 0.08,
        }
    }
}

impl SynthConfig {
    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let k = self.k_classes;
        let mut out = Vec::with_capacity(k);
        for c in 0..k {
            let exponent = -(c as f64) / (k as f64 - 1.0);
            let size = (self.head_count as f64 * self.imbalance.powf(exponent)).round() as usize;
            if size == 0 {
                return Err(Error::invalid(
                    "imbalance",
                    self.imbalance,
                    "tail class rounds to zero samples; raise head_count or lower imbalance",
                ));
            }
            out.push(size);
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        if self.k_classes < 2 {
            return Err(Error::invalid(
                "k_classes",
                self.k_classes,
                "need at least 2 classes",
            ));
        }
        if self.dim < 2 {
            return Err(Error::invalid("dim", self.dim, "need dimension >= 2"));
        }
        if !(self.imbalance >= 1.0) {
            return Err(Error::invalid(
                "imbalance",
                self.imbalance,
                "imbalance ratio must be >= 1",
            ));
        }
        if self.head_count < self.k_classes {
            return Err(Error::invalid(
                "head_count",
                self.head_count,
                "head class must hold at least k_classes samples",
            ));
        }
        if !(self.intra_spread > 0.0) {
            return Err(Error::invalid(
                "intra_spread",
                self.intra_spread,
                "spread must be positive",
            ));
        }
        Ok(())
    }
}

/// Draws a long-tailed Gaussian mixture on the unit sphere. Class means are
/// rejection-sampled to keep pairwise cosines below 0.95 so clusters stay
/// separable at small spread. Deterministic for a fixed seed.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<(EmbeddingSet, LabelInfo)> {
    cfg.validate()?;
    let counts = cfg.class_counts()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut means: Vec<Vec<f64>> = Vec::with_capacity(cfg.k_classes);
    let mut attempts = 0usize;
    while means.len() < cfg.k_classes {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::invalid(
                "k_classes",
                cfg.k_classes,
                "cannot place class means with pairwise cosine < 0.95 in this dimension",
            ));
        }
        let mut m: Vec<f64> = (0..cfg.dim).map(|_| rng.sample(StandardNormal)).collect();
        normalize_in_place(&mut m, means.len())?;
        if means.iter().all(|prev| dot(prev, &m) < 0.95) {
            means.push(m);
        }
    }

    let n: usize = counts.iter().sum();
    let sigma = cfg.intra_spread / (cfg.dim as f64).sqrt();
    let mut data = Vec::with_capacity(n * cfg.dim);
    let mut labels = Vec::with_capacity(n);
    for (class, (&count, mean)) in counts.iter().zip(&means).enumerate() {
        for _ in 0..count {
            let start = data.len();
            for &m in mean {
                let noise: f64 = rng.sample(StandardNormal);
                data.push(m + sigma * noise);
            }
            normalize_in_place(&mut data[start..], labels.len())?;
            labels.push(class as i64);
        }
    }

    let embeddings = EmbeddingSet::new(data, n, cfg.dim)?;
    let info = LabelInfo::from_labels(labels.clone(), Some(labels))?;
    Ok((embeddings, info))
}

/// Masks a fully-labelled dataset into a GCD split: the ceil(frac_old * K)
/// largest classes become "old", within each a `frac_labelled` share keeps
/// its label (seeded choice); everything else becomes unlabelled.
pub fn split_labelled(
    truth: &[i64],
    frac_old_classes: f64,
    frac_labelled: f64,
    seed: u64,
) -> Result<LabelInfo> {
    for (name, frac) in [
        ("frac_old_classes", frac_old_classes),
        ("frac_labelled", frac_labelled),
    ] {
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(Error::invalid(name, frac, "fraction must be in (0, 1]"));
        }
    }
    let mut by_class = std::collections::BTreeMap::<i64, Vec<usize>>::new();
    for (i, &l) in truth.iter().enumerate() {
        if l < 0 {
            return Err(Error::invalid(
                "truth",
                format!("truth[{i}]={l}"),
                "split requires full ground truth",
            ));
        }
        by_class.entry(l).or_default().push(i);
    }
    let k = by_class.len();
    let n_old = ((frac_old_classes * k as f64).ceil() as usize).clamp(1, k);

    // Old classes are the largest; ties go to the lower class id.
    let mut order: Vec<(i64, usize)> = by_class.iter().map(|(&c, ids)| (c, ids.len())).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let old: BTreeSet<i64> = order.iter().take(n_old).map(|&(c, _)| c).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![UNLABELLED; truth.len()];
    for (&class, ids) in &by_class {
        if !old.contains(&class) {
            continue;
        }
        let n_lab = (frac_labelled * ids.len() as f64).round() as usize;
        if n_lab == 0 {
            return Err(Error::invalid(
                "frac_labelled",
                frac_labelled,
                "an old class would receive zero labelled samples",
            ));
        }
        let mut pool = ids.clone();
        pool.shuffle(&mut rng);
        for &i in pool.iter().take(n_lab) {
            labels[i] = class;
        }
    }
    LabelInfo::from_labels(labels, Some(truth.to_vec()))
}

// ---------------------------------------------------------------------------
// Disk format
// ---------------------------------------------------------------------------

/// Manifest schema. Paths are resolved relative to the manifest's directory.
/// `k`, when present, upper-bounds the label ids in both label files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub n: usize,
    pub d: usize,
    pub dtype: String,
    pub data: String,
    pub labels: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_labels: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_label_file(path: &Path, n: usize, k: Option<usize>) -> Result<Vec<i64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(n);
    for (line_no, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: i64 = trimmed.parse().map_err(|_| Error::Label {
            path: path.to_path_buf(),
            line: line_no + 1,
            reason: format!("not an integer: {trimmed:?}"),
        })?;
        if value < UNLABELLED {
            return Err(Error::Label {
                path: path.to_path_buf(),
                line: line_no + 1,
                reason: format!("label {value} below the unlabelled sentinel -1"),
            });
        }
        if let Some(k) = k {
            if value >= 0 && value as usize >= k {
                return Err(Error::Label {
                    path: path.to_path_buf(),
                    line: line_no + 1,
                    reason: format!("label {value} >= declared class count {k}"),
                });
            }
        }
        out.push(value);
    }
    if out.len() != n {
        return Err(Error::Label {
            path: path.to_path_buf(),
            line: out.len(),
            reason: format!("expected {n} labels, found {}", out.len()),
        });
    }
    Ok(out)
}

/// Loads a manifest-described dataset and normalizes the rows.
pub fn load_dataset(manifest_path: &Path) -> Result<(EmbeddingSet, LabelInfo)> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: manifest_path.to_path_buf(),
        source: e,
    })?;
    if manifest.dtype != "f32" {
        return Err(Error::manifest(
            manifest_path,
            format!("unsupported dtype {:?}, expected \"f32\"", manifest.dtype),
        ));
    }
    if manifest.n == 0 || manifest.d < 2 {
        return Err(Error::manifest(
            manifest_path,
            format!("invalid shape n={} d={}", manifest.n, manifest.d),
        ));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let data_path = resolve(base, &manifest.data);
    let mut file = fs::File::open(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let expected = (manifest.n * manifest.d * 4) as u64;
    let meta = file.metadata().map_err(|e| Error::io(&data_path, e))?;
    if meta.len() != expected {
        return Err(Error::DataSize {
            path: data_path,
            expected,
            found: meta.len(),
            n: manifest.n,
            d: manifest.d,
        });
    }
    let mut bytes = Vec::with_capacity(expected as usize);
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(&data_path, e))?;
    let mut data = Vec::with_capacity(manifest.n * manifest.d);
    for chunk in bytes.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::manifest(
                manifest_path,
                format!("non-finite value at flat index {}", data.len()),
            ));
        }
        data.push(v as f64);
    }
    let mut embeddings = EmbeddingSet::new(data, manifest.n, manifest.d)?;
    embeddings.normalize()?;

    let labels_path = resolve(base, &manifest.labels);
    let labels = read_label_file(&labels_path, manifest.n, manifest.k)?;
    let true_labels = match &manifest.true_labels {
        Some(rel) => {
            let path = resolve(base, rel);
            let t = read_label_file(&path, manifest.n, manifest.k)?;
            if let Some(pos) = t.iter().position(|&l| l < 0) {
                return Err(Error::Label {
                    path,
                    line: pos + 1,
                    reason: "ground-truth file contains the unlabelled sentinel".into(),
                });
            }
            Some(t)
        }
        None => None,
    };
    let info = LabelInfo::from_labels(labels, true_labels)?;
    Ok((embeddings, info))
}

/// Writes data/labels/manifest files under `dir` with the given `stem`.
/// Returns the manifest path. Ground truth is written when available.
pub fn write_dataset(
    dir: &Path,
    stem: &str,
    embeddings: &EmbeddingSet,
    info: &LabelInfo,
    k: Option<usize>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let data_name = format!("{stem}.data.bin");
    let labels_name = format!("{stem}.labels.txt");
    let truth_name = format!("{stem}.true_labels.txt");

    let data_path = dir.join(&data_name);
    let mut bytes = Vec::with_capacity(embeddings.data().len() * 4);
    for &v in embeddings.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(&data_path, &bytes).map_err(|e| Error::io(&data_path, e))?;

    let labels_path = dir.join(&labels_name);
    write_label_file(&labels_path, &info.labels)?;
    let true_labels = match &info.true_labels {
        Some(truth) => {
            write_label_file(&dir.join(&truth_name), truth)?;
            Some(truth_name)
        }
        None => None,
    };

    let manifest = Manifest {
        n: embeddings.n(),
        d: embeddings.d(),
        dtype: "f32".into(),
        data: data_name,
        labels: labels_name,
        true_labels,
        k,
    };
    let manifest_path = dir.join(format!("{stem}.manifest.json"));
    let mut file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    serde_json::to_writer_pretty(&mut file, &manifest).map_err(|e| Error::Json {
        path: manifest_path.clone(),
        source: e,
    })?;
    file.write_all(b"\n")
        .map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

fn write_label_file(path: &Path, labels: &[i64]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 4);
    for &l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_three_four_five() {
        let mut e = EmbeddingSet::from_rows(&[vec![3.0, 4.0], vec![0.0, 1.0]]).unwrap();
        e.normalize().unwrap();
        assert!((e.row(0)[0] - 0.6).abs() < 1e-12);
        assert!((e.row(0)[1] - 0.8).abs() < 1e-12);
        assert_eq!(e.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let mut e = EmbeddingSet::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        match e.normalize() {
            Err(Error::ZeroNorm { index: 0, .. }) => {}
            other => panic!("expected zero-norm error, got {other:?}"),
        }
    }

    #[test]
    fn normalize_is_idempotent() {
        let cfg = SynthConfig {
            k_classes: 4,
            dim: 8,
            imbalance: 3.0,
            head_count: 30,
            intra_spread: 0.1,
        };
        let (mut e, _) = generate_synthetic(&cfg, 11).unwrap();
        let delta = e.normalize().unwrap();
        assert!(delta <= 1e-12, "renormalization moved entries by {delta}");
    }

    #[test]
    fn geometric_counts_match_profile() {
        let cfg = SynthConfig {
            k_classes: 3,
            dim: 4,
            imbalance: 10.0,
            head_count: 100,
            intra_spread: 0.05,
        };
        assert_eq!(cfg.class_counts().unwrap(), vec![100, 32, 10]);

        let uniform = SynthConfig {
            k_classes: 2,
            imbalance: 1.0,
            head_count: 50,
            ..cfg
        };
        assert_eq!(uniform.class_counts().unwrap(), vec![50, 50]);
    }

    #[test]
    fn synthetic_is_deterministic_and_unit_norm() {
        let cfg = SynthConfig {
            k_classes: 5,
            dim: 16,
            imbalance: 8.0,
            head_count: 40,
            intra_spread: 0.1,
        };
        let (e1, l1) = generate_synthetic(&cfg, 42).unwrap();
        let (e2, l2) = generate_synthetic(&cfg, 42).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(l1, l2);
        assert!(e1.is_unit_norm(1e-9));

        let (e3, _) = generate_synthetic(&cfg, 43).unwrap();
        assert_ne!(e1, e3);
    }

    #[test]
    fn synthetic_counts_are_non_increasing() {
        for &(k, lam, head) in &[(5usize, 4.0, 60usize), (10, 25.0, 100), (7, 1.0, 21)] {
            let cfg = SynthConfig {
                k_classes: k,
                dim: 6,
                imbalance: lam,
                head_count: head,
                intra_spread: 0.1,
            };
            let counts = cfg.class_counts().unwrap();
            assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
        }
    }

    #[test]
    fn imbalance_factor_basics() {
        let c = ClassCounts::new(vec![10, 50, 100]).unwrap();
        assert_eq!(imbalance_factor(&c), 10.0);
        let u = ClassCounts::new(vec![7, 7, 7]).unwrap();
        assert_eq!(imbalance_factor(&u), 1.0);
    }

    #[test]
    fn imbalance_factor_herbarium_scale() {
        // A head of 3089 against a tail of 67 reproduces a ratio of ~46.1,
        // the regime this toolkit targets.
        let c = ClassCounts::new(vec![3089, 800, 200, 67]).unwrap();
        assert!((imbalance_factor(&c) - 46.1).abs() < 0.05);
    }

    #[test]
    fn synthetic_imbalance_close_to_requested() {
        let cfg = SynthConfig {
            k_classes: 12,
            dim: 8,
            imbalance: 10.0,
            head_count: 100,
            intra_spread: 0.1,
        };
        let counts = ClassCounts::new(cfg.class_counts().unwrap()).unwrap();
        let lam = imbalance_factor(&counts);
        // N_K = round(head / lambda) so the realized ratio can differ by
        // one unit of the tail count.
        assert!((lam - 10.0).abs() <= 100.0 / 9.0 - 100.0 / 10.0 + 1e-9);
    }

    #[test]
    fn split_masks_expected_fractions() {
        let cfg = SynthConfig {
            k_classes: 10,
            dim: 8,
            imbalance: 5.0,
            head_count: 50,
            intra_spread: 0.1,
        };
        let (_, info) = generate_synthetic(&cfg, 3).unwrap();
        let truth = info.true_labels.as_ref().unwrap();
        let split = split_labelled(truth, 0.5, 0.5, 9).unwrap();

        assert_eq!(split.k_labelled(), 5);
        // Generator orders classes by descending size, so old = ids 0..5.
        let expect_old: BTreeSet<i64> = (0..5).collect();
        assert_eq!(split.old_class_set, expect_old);
        for (&masked, &t) in split.labels.iter().zip(truth) {
            assert!(masked == UNLABELLED || masked == t);
            if t >= 5 {
                assert_eq!(masked, UNLABELLED);
            }
        }
        // Half of each old class labelled, rounded.
        let counts = cfg.class_counts().unwrap();
        for class in 0..5i64 {
            let labelled = split.labels.iter().filter(|&&l| l == class).count();
            let expect = (0.5 * counts[class as usize] as f64).round() as usize;
            assert_eq!(labelled, expect, "class {class}");
        }
    }

    #[test]
    fn split_full_supervision_is_degenerate() {
        let truth = vec![0, 0, 1, 1, 2, 2];
        let split = split_labelled(&truth, 1.0, 1.0, 0).unwrap();
        assert_eq!(split.labels, truth);
        assert!(split.unlabelled_ids().is_empty());
    }

    #[test]
    fn split_rejects_empty_labelled_class() {
        let truth = vec![0, 0, 0, 1, 1, 1];
        // 0.1 of 3 samples rounds to 0.
        assert!(split_labelled(&truth, 1.0, 0.1, 0).is_err());
    }

    #[test]
    fn roundtrip_via_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            k_classes: 4,
            dim: 6,
            imbalance: 4.0,
            head_count: 25,
            intra_spread: 0.1,
        };
        let (e, full) = generate_synthetic(&cfg, 5).unwrap();
        let truth = full.true_labels.clone().unwrap();
        let info = split_labelled(&truth, 0.5, 0.5, 5).unwrap();
        let manifest = write_dataset(dir.path(), "toy", &e, &info, Some(4)).unwrap();
        let (e2, info2) = load_dataset(&manifest).unwrap();

        assert_eq!(e.n(), e2.n());
        assert_eq!(e.d(), e2.d());
        assert_eq!(info.labels, info2.labels);
        assert_eq!(info.true_labels, info2.true_labels);
        // f32 round-trip then renormalization stays within f32 precision.
        for i in 0..e.n() {
            for (a, b) in e.row(i).iter().zip(e2.row(i)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn load_rejects_short_label_file() {
        let dir = tempfile::tempdir().unwrap();
        let e = EmbeddingSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let info = LabelInfo::from_labels(vec![0, 1], None).unwrap();
        let manifest = write_dataset(dir.path(), "bad", &e, &info, None).unwrap();
        std::fs::write(dir.path().join("bad.labels.txt"), "0\n").unwrap();
        match load_dataset(&manifest) {
            Err(Error::Label { .. }) => {}
            other => panic!("expected label error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let e = EmbeddingSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let info = LabelInfo::from_labels(vec![0, 1], None).unwrap();
        let manifest = write_dataset(dir.path(), "short", &e, &info, None).unwrap();
        std::fs::write(dir.path().join("short.data.bin"), [0u8; 7]).unwrap();
        match load_dataset(&manifest) {
            Err(Error::DataSize { .. }) => {}
            other => panic!("expected size error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_label_above_declared_k() {
        let dir = tempfile::tempdir().unwrap();
        let e = EmbeddingSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let info = LabelInfo::from_labels(vec![0, 3], None).unwrap();
        let manifest = write_dataset(dir.path(), "overk", &e, &info, Some(2)).unwrap();
        match load_dataset(&manifest) {
            Err(Error::Label { .. }) => {}
            other => panic!("expected label error, got {other:?}"),
        }
    }
}
