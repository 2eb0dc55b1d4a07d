//! Prototype classifier on frozen embeddings: cosine logits with student and
//! teacher temperatures, the training losses, and analytic prototype
//! gradients.
//!
//! Teacher-temperature quantities are stop-gradient targets. The prototype
//! rows are the only trainable state; logits always go through row
//! normalization, so gradients carry the normalization Jacobian
//! (I - u u^T)/||c||.

use std::fs;
use std::io::Read as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{dot, EmbeddingSet};
use crate::error::{Error, Result};

/// Floor applied inside logarithms of averaged probabilities; every
/// application on a smaller value is counted as a clamp event.
pub const LOG_FLOOR: f64 = 1e-12;

/// K x d prototype rows plus the two softmax temperatures. Rows may drift
/// off unit norm during SGD; logits normalize at use.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    rows: Vec<f64>,
    k: usize,
    d: usize,
    pub tau_s: f64,
    pub tau_t: f64,
}

impl PrototypeSet {
    pub fn new(rows: Vec<f64>, k: usize, d: usize, tau_s: f64, tau_t: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("k_classes", k, "need at least 2 prototypes"));
        }
        if rows.len() != k * d {
            return Err(Error::Dimension {
                context: "prototype matrix",
                expected: k * d,
                got: rows.len(),
            });
        }
        for (name, tau) in [("tau_s", tau_s), ("tau_t", tau_t)] {
            if !(tau > 0.0) || !tau.is_finite() {
                return Err(Error::invalid(name, tau, "temperature must be positive"));
            }
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("prototypes", "matrix", "non-finite entry"));
        }
        Ok(Self {
            rows,
            k,
            d,
            tau_s,
            tau_t,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.d..(k + 1) * self.d]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    /// Unit-norm prototype directions u_k = c_k / ||c_k||.
    pub fn normalized_rows(&self) -> Result<Vec<f64>> {
        let mut out = self.rows.clone();
        for k in 0..self.k {
            let row = &mut out[k * self.d..(k + 1) * self.d];
            let norm = dot(row, row).sqrt();
            if norm < 1e-300 {
                return Err(Error::ZeroNorm { index: k, norm });
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        Ok(out)
    }

    /// Plain SGD step c <- c - lr * grad on the raw rows.
    pub fn apply_step(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.rows.len() {
            return Err(Error::Dimension {
                context: "prototype gradient",
                expected: self.rows.len(),
                got: grad.len(),
            });
        }
        for (c, g) in self.rows.iter_mut().zip(grad) {
            *c -= lr * g;
        }
        Ok(())
    }

    /// l^(k) = <h, c_k/||c_k||> / tau.
    pub fn logits(&self, h: &[f64], tau: f64) -> Result<Vec<f64>> {
        if h.len() != self.d {
            return Err(Error::Dimension {
                context: "logits input",
                expected: self.d,
                got: h.len(),
            });
        }
        if !(tau > 0.0) {
            return Err(Error::invalid("tau", tau, "temperature must be positive"));
        }
        let mut out = Vec::with_capacity(self.k);
        for k in 0..self.k {
            let row = self.row(k);
            let norm = dot(row, row).sqrt();
            if norm < 1e-300 {
                return Err(Error::ZeroNorm { index: k, norm });
            }
            out.push(dot(h, row) / (norm * tau));
        }
        Ok(out)
    }

    pub fn predict(&self, h: &[f64], tau: f64) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(h, tau)?))
    }

    /// Probabilities for every row of `embeddings` at temperature `tau`.
    pub fn predict_matrix(&self, embeddings: &EmbeddingSet, tau: f64) -> Result<ProbMatrix> {
        if embeddings.d() != self.d {
            return Err(Error::Dimension {
                context: "predict_matrix",
                expected: self.d,
                got: embeddings.d(),
            });
        }
        let n = embeddings.n();
        let mut rows = Vec::with_capacity(n * self.k);
        for i in 0..n {
            rows.extend(self.predict(embeddings.row(i), tau)?);
        }
        ProbMatrix::new(rows, n, self.k, tau)
    }
}

/// Row-stochastic n x K matrix of class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    rows: Vec<f64>,
    n: usize,
    k: usize,
    pub temperature: f64,
}

impl ProbMatrix {
    pub fn new(rows: Vec<f64>, n: usize, k: usize, temperature: f64) -> Result<Self> {
        if rows.len() != n * k {
            return Err(Error::Dimension {
                context: "probability matrix",
                expected: n * k,
                got: rows.len(),
            });
        }
        for i in 0..n {
            let row = &rows[i * k..(i + 1) * k];
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) {
                return Err(Error::invalid(
                    "probabilities",
                    format!("row {i}"),
                    "row is not a probability distribution",
                ));
            }
        }
        Ok(Self {
            rows,
            n,
            k,
            temperature,
        })
    }

    pub fn uniform(n: usize, k: usize) -> Self {
        Self {
            rows: vec![1.0 / k as f64; n * k],
            n,
            k,
            temperature: f64::NAN,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.k..(i + 1) * self.k]
    }
}

/// Numerically stabilized softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// log softmax(l) computed as l - logsumexp(l); exact even where softmax
/// entries underflow to zero.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// One training mini-batch: labelled views with their class ids, plus
/// unlabelled view pairs (hat = student path, tilde = teacher path). All
/// feature vectors are unit norm.
#[derive(Debug, Clone, Default)]
pub struct TrainBatch {
    pub sup_feats: Vec<Vec<f64>>,
    pub sup_labels: Vec<usize>,
    pub unsup_hat: Vec<Vec<f64>>,
    pub unsup_tilde: Vec<Vec<f64>>,
}

impl TrainBatch {
    fn validate(&self, k: usize) -> Result<()> {
        if self.sup_feats.len() != self.sup_labels.len() {
            return Err(Error::Dimension {
                context: "labelled batch",
                expected: self.sup_feats.len(),
                got: self.sup_labels.len(),
            });
        }
        if self.unsup_hat.len() != self.unsup_tilde.len() {
            return Err(Error::Dimension {
                context: "view pairs",
                expected: self.unsup_hat.len(),
                got: self.unsup_tilde.len(),
            });
        }
        if let Some(&y) = self.sup_labels.iter().find(|&&y| y >= k) {
            return Err(Error::invalid("label", y, "class id out of prototype range"));
        }
        if self.sup_feats.is_empty() && self.unsup_hat.is_empty() {
            return Err(Error::TooFewSamples {
                context: "train batch",
                needed: 1,
                got: 0,
            });
        }
        Ok(())
    }
}

/// Loss-term weights. The combined objective is
/// (1 - lambda_cls) * L_u + lambda_cls * L_s + L_prior, where L_u already
/// subtracts eps_entropy * H(p_bar).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub eps_entropy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 0.35,
            eps_entropy: 1.0,
        }
    }
}

impl LossWeights {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_cls) {
            return Err(Error::invalid(
                "lambda_cls",
                self.lambda_cls,
                "weight must lie in [0, 1]",
            ));
        }
        if !(self.eps_entropy >= 0.0) {
            return Err(Error::invalid(
                "eps_entropy",
                self.eps_entropy,
                "entropy weight must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub sup: f64,
    pub unsup: f64,
    pub prior: f64,
    pub total: f64,
    pub clamp_events: usize,
}

/// Mean cross-entropy -log p_hat^(y) over a labelled batch at tau_s.
pub fn loss_supervised(
    feats: &[Vec<f64>],
    labels: &[usize],
    protos: &PrototypeSet,
) -> Result<f64> {
    if feats.is_empty() {
        return Err(Error::TooFewSamples {
            context: "supervised loss",
            needed: 1,
            got: 0,
        });
    }
    if feats.len() != labels.len() {
        return Err(Error::Dimension {
            context: "supervised loss",
            expected: feats.len(),
            got: labels.len(),
        });
    }
    let mut total = 0.0;
    for (h, &y) in feats.iter().zip(labels) {
        if y >= protos.k() {
            return Err(Error::invalid("label", y, "class id out of prototype range"));
        }
        let logp = log_softmax(&protos.logits(h, protos.tau_s)?);
        total -= logp[y];
    }
    Ok(total / feats.len() as f64)
}

/// Teacher probabilities p_tilde for every view pair, at tau_t. Computed
/// once per step and treated as constants afterwards (stop-gradient).
pub fn teacher_probs(batch: &TrainBatch, protos: &PrototypeSet) -> Result<Vec<Vec<f64>>> {
    batch
        .unsup_tilde
        .iter()
        .map(|h| protos.predict(h, protos.tau_t))
        .collect()
}

/// Batch-mean prediction p_bar = mean over views of (p_hat + p_tilde)/2.
fn batch_mean(student: &[Vec<f64>], teacher: &[Vec<f64>], k: usize) -> Vec<f64> {
    let m = student.len();
    let mut bar = vec![0.0; k];
    for (ph, pt) in student.iter().zip(teacher) {
        for c in 0..k {
            bar[c] += ph[c] + pt[c];
        }
    }
    let scale = 1.0 / (2 * m) as f64;
    for v in bar.iter_mut() {
        *v *= scale;
    }
    bar
}

fn ln_floored(p: f64, clamps: &mut usize) -> f64 {
    if p < LOG_FLOOR {
        *clamps += 1;
        LOG_FLOOR.ln()
    } else {
        p.ln()
    }
}

/// Unsupervised classification loss: mean CE of student predictions against
/// the given teacher targets, minus eps_entropy * H(p_bar). Returns the loss
/// and the count of log-floor clamps inside H.
pub fn loss_unsupervised_frozen(
    hat: &[Vec<f64>],
    teacher: &[Vec<f64>],
    protos: &PrototypeSet,
    eps_entropy: f64,
) -> Result<(f64, usize)> {
    if hat.is_empty() {
        return Err(Error::TooFewSamples {
            context: "unsupervised loss",
            needed: 1,
            got: 0,
        });
    }
    if hat.len() != teacher.len() {
        return Err(Error::Dimension {
            context: "unsupervised loss",
            expected: hat.len(),
            got: teacher.len(),
        });
    }
    let k = protos.k();
    let mut ce = 0.0;
    let mut student = Vec::with_capacity(hat.len());
    for (h, pt) in hat.iter().zip(teacher) {
        let logp = log_softmax(&protos.logits(h, protos.tau_s)?);
        ce -= pt.iter().zip(&logp).map(|(&t, &lp)| t * lp).sum::<f64>();
        student.push(softmax(&protos.logits(h, protos.tau_s)?));
    }
    ce /= hat.len() as f64;

    let bar = batch_mean(&student, teacher, k);
    let mut clamps = 0;
    let entropy: f64 = -bar
        .iter()
        .map(|&p| p * ln_floored(p, &mut clamps))
        .sum::<f64>();
    Ok((ce - eps_entropy * entropy, clamps))
}

/// As [`loss_unsupervised_frozen`] with the teacher evaluated in place.
pub fn loss_unsupervised(
    hat: &[Vec<f64>],
    tilde: &[Vec<f64>],
    protos: &PrototypeSet,
    eps_entropy: f64,
) -> Result<(f64, usize)> {
    let batch = TrainBatch {
        unsup_hat: hat.to_vec(),
        unsup_tilde: tilde.to_vec(),
        ..Default::default()
    };
    let teacher = teacher_probs(&batch, protos)?;
    loss_unsupervised_frozen(hat, &teacher, protos, eps_entropy)
}

/// Prior-matching loss l(p_prior, p_bar) = -sum_k p_prior^(k) log p_bar^(k).
pub fn loss_prior(p_bar: &[f64], p_prior: &[f64]) -> Result<(f64, usize)> {
    if p_bar.len() != p_prior.len() {
        return Err(Error::Dimension {
            context: "prior loss",
            expected: p_prior.len(),
            got: p_bar.len(),
        });
    }
    let mut clamps = 0;
    let loss = -p_prior
        .iter()
        .zip(p_bar)
        .map(|(&q, &p)| q * ln_floored(p, &mut clamps))
        .sum::<f64>();
    Ok((loss, clamps))
}

/// Full objective with the teacher path frozen to the supplied
/// probabilities. The finite-difference oracle perturbs prototypes against
/// exactly this function.
pub fn total_loss_frozen(
    batch: &TrainBatch,
    protos: &PrototypeSet,
    weights: &LossWeights,
    p_prior: Option<&[f64]>,
    teacher: &[Vec<f64>],
) -> Result<LossBreakdown> {
    batch.validate(protos.k())?;
    weights.validate()?;
    let mut out = LossBreakdown::default();

    if !batch.sup_feats.is_empty() {
        out.sup = loss_supervised(&batch.sup_feats, &batch.sup_labels, protos)?;
    }
    if !batch.unsup_hat.is_empty() {
        let (unsup, clamps) =
            loss_unsupervised_frozen(&batch.unsup_hat, teacher, protos, weights.eps_entropy)?;
        out.unsup = unsup;
        out.clamp_events += clamps;
        if let Some(prior) = p_prior {
            let student: Vec<Vec<f64>> = batch
                .unsup_hat
                .iter()
                .map(|h| protos.predict(h, protos.tau_s))
                .collect::<Result<_>>()?;
            let bar = batch_mean(&student, teacher, protos.k());
            let (lp, clamps) = loss_prior(&bar, prior)?;
            out.prior = lp;
            out.clamp_events += clamps;
        }
    }
    out.total = (1.0 - weights.lambda_cls) * out.unsup + weights.lambda_cls * out.sup + out.prior;
    Ok(out)
}

pub fn total_loss(
    batch: &TrainBatch,
    protos: &PrototypeSet,
    weights: &LossWeights,
    p_prior: Option<&[f64]>,
) -> Result<LossBreakdown> {
    let teacher = teacher_probs(batch, protos)?;
    total_loss_frozen(batch, protos, weights, p_prior, &teacher)
}

/// d(softmax CE chain)/d logits for a vector of per-probability upstream
/// derivatives z: returns p_m * (z_m - sum_k z_k p_k).
fn softmax_vjp(p: &[f64], z: &[f64]) -> Vec<f64> {
    let inner: f64 = z.iter().zip(p).map(|(&a, &b)| a * b).sum();
    p.iter().zip(z).map(|(&pm, &zm)| pm * (zm - inner)).collect()
}

/// Exact gradient of [`total_loss_frozen`] with respect to the raw prototype
/// rows, including the normalization Jacobian. Teacher probabilities are
/// constants.
pub fn grad_prototypes_frozen(
    batch: &TrainBatch,
    protos: &PrototypeSet,
    weights: &LossWeights,
    p_prior: Option<&[f64]>,
    teacher: &[Vec<f64>],
) -> Result<Vec<f64>> {
    batch.validate(protos.k())?;
    weights.validate()?;
    let k = protos.k();
    let d = protos.d();
    let lam = weights.lambda_cls;

    // Accumulate dL/du_k (u = normalized prototype) first.
    let mut grad_u = vec![0.0; k * d];
    let add = |g_logits: &[f64], h: &[f64], grad_u: &mut [f64]| {
        for (c, &g) in g_logits.iter().enumerate() {
            let coeff = g / protos.tau_s;
            let row = &mut grad_u[c * d..(c + 1) * d];
            for (r, &hv) in row.iter_mut().zip(h) {
                *r += coeff * hv;
            }
        }
    };

    if !batch.sup_feats.is_empty() {
        let m = batch.sup_feats.len() as f64;
        for (h, &y) in batch.sup_feats.iter().zip(&batch.sup_labels) {
            let mut g = softmax(&protos.logits(h, protos.tau_s)?);
            g[y] -= 1.0;
            for v in g.iter_mut() {
                *v *= lam / m;
            }
            add(&g, h, &mut grad_u);
        }
    }

    if !batch.unsup_hat.is_empty() {
        let m = batch.unsup_hat.len() as f64;
        let student: Vec<Vec<f64>> = batch
            .unsup_hat
            .iter()
            .map(|h| protos.predict(h, protos.tau_s))
            .collect::<Result<_>>()?;
        let bar = batch_mean(&student, teacher, k);

        // Upstream derivative z_c of the p_bar-dependent terms with respect
        // to p_bar_c, matching the floored logs of the loss exactly: below
        // the floor the log is constant, so its derivative vanishes.
        let mut z = vec![0.0; k];
        for c in 0..k {
            let above = bar[c] >= LOG_FLOOR;
            let ln_bar = bar[c].max(LOG_FLOOR).ln();
            // -eps*H term is eps * sum p_bar * ln_floored(p_bar); its
            // derivative is ln p_bar + 1 on the smooth branch, ln(floor)
            // below it (the log is constant there).
            let smooth = if above { 1.0 } else { 0.0 };
            z[c] += (1.0 - lam) * weights.eps_entropy * (ln_bar + smooth);
            if let Some(prior) = p_prior {
                if above {
                    z[c] -= prior[c] / bar[c];
                }
            }
        }

        for (i, h) in batch.unsup_hat.iter().enumerate() {
            let p_hat = &student[i];
            // CE part: (1-lam) * (p_hat - p_tilde) / m.
            let mut g: Vec<f64> = p_hat
                .iter()
                .zip(&teacher[i])
                .map(|(&ph, &pt)| (1.0 - lam) * (ph - pt) / m)
                .collect();
            // p_bar-dependent part through this view's softmax.
            let vjp = softmax_vjp(p_hat, &z);
            let scale = 1.0 / (2.0 * m);
            for (gv, &jv) in g.iter_mut().zip(&vjp) {
                *gv += scale * jv;
            }
            add(&g, h, &mut grad_u);
        }
    }

    // Pull dL/du back through u = c/||c||: (g - u (u . g)) / ||c||.
    let mut grad_c = vec![0.0; k * d];
    for c in 0..k {
        let row = protos.row(c);
        let norm = dot(row, row).sqrt();
        if norm < 1e-300 {
            return Err(Error::ZeroNorm { index: c, norm });
        }
        let u: Vec<f64> = row.iter().map(|&v| v / norm).collect();
        let gu = &grad_u[c * d..(c + 1) * d];
        let proj = dot(&u, gu);
        let out = &mut grad_c[c * d..(c + 1) * d];
        for ((o, &g), &uv) in out.iter_mut().zip(gu).zip(&u) {
            *o = (g - proj * uv) / norm;
        }
    }
    Ok(grad_c)
}

pub fn grad_prototypes(
    batch: &TrainBatch,
    protos: &PrototypeSet,
    weights: &LossWeights,
    p_prior: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let teacher = teacher_probs(batch, protos)?;
    grad_prototypes_frozen(batch, protos, weights, p_prior, &teacher)
}

// ---------------------------------------------------------------------------
// Representation losses (forward-only monitoring; the backbone is frozen)
// ---------------------------------------------------------------------------

/// (1 - lambda_rep) * SelfCon + lambda_rep * SupCon over a two-view batch.
///
/// SelfCon is NT-Xent across all 2m views with the partner view as the
/// positive. SupCon (the "out" variant) runs over labelled views only, with
/// same-label views as positives; `labels[i] < 0` marks unlabelled samples.
pub fn loss_representation(
    hat: &[Vec<f64>],
    tilde: &[Vec<f64>],
    labels: Option<&[i64]>,
    lambda_rep: f64,
    temperature: f64,
) -> Result<f64> {
    if hat.len() != tilde.len() || hat.is_empty() {
        return Err(Error::TooFewSamples {
            context: "representation loss",
            needed: 1,
            got: hat.len().min(tilde.len()),
        });
    }
    if !(0.0..=1.0).contains(&lambda_rep) {
        return Err(Error::invalid(
            "lambda_rep",
            lambda_rep,
            "weight must lie in [0, 1]",
        ));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid(
            "temperature",
            temperature,
            "temperature must be positive",
        ));
    }
    let m = hat.len();
    // Views interleaved (hat_0, tilde_0, hat_1, tilde_1, ...): the positive
    // partner of view v is v ^ 1.
    let views: Vec<&[f64]> = hat
        .iter()
        .zip(tilde)
        .flat_map(|(a, b)| [a.as_slice(), b.as_slice()])
        .collect();

    let selfcon = if lambda_rep < 1.0 {
        let mut total = 0.0;
        for (a, &va) in views.iter().enumerate() {
            let sims: Vec<f64> = views
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != a)
                .map(|(_, &vb)| dot(va, vb) / temperature)
                .collect();
            let lse = log_sum_exp(&sims);
            let pos = dot(va, views[a ^ 1]) / temperature;
            total -= pos - lse;
        }
        total / (2 * m) as f64
    } else {
        0.0
    };

    let supcon = if lambda_rep > 0.0 {
        let labels = labels.ok_or(Error::invalid(
            "labels",
            "none",
            "supervised contrastive term requires labels",
        ))?;
        if labels.len() != m {
            return Err(Error::Dimension {
                context: "representation labels",
                expected: m,
                got: labels.len(),
            });
        }
        // One entry per labelled view: (flat view index, label).
        let lab_views: Vec<(usize, i64)> = (0..2 * m)
            .filter_map(|v| {
                let y = labels[v / 2];
                (y >= 0).then_some((v, y))
            })
            .collect();
        if lab_views.is_empty() {
            return Err(Error::TooFewSamples {
                context: "supervised contrastive term",
                needed: 1,
                got: 0,
            });
        }
        let mut total = 0.0;
        let mut anchors = 0usize;
        for &(a, ya) in &lab_views {
            let positives: Vec<usize> = lab_views
                .iter()
                .filter(|&&(b, yb)| b != a && yb == ya)
                .map(|&(b, _)| b)
                .collect();
            if positives.is_empty() {
                continue;
            }
            let sims: Vec<f64> = lab_views
                .iter()
                .filter(|&&(b, _)| b != a)
                .map(|&(b, _)| dot(views[a], views[b]) / temperature)
                .collect();
            let lse = log_sum_exp(&sims);
            let mut anchor_loss = 0.0;
            for &p in &positives {
                anchor_loss -= dot(views[a], views[p]) / temperature - lse;
            }
            total += anchor_loss / positives.len() as f64;
            anchors += 1;
        }
        if anchors == 0 {
            return Err(Error::TooFewSamples {
                context: "supervised contrastive anchors with positives",
                needed: 1,
                got: 0,
            });
        }
        total / anchors as f64
    } else {
        0.0
    };

    Ok((1.0 - lambda_rep) * selfcon + lambda_rep * supcon)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    #[serde(rename = "K")]
    k: usize,
    d: usize,
    tau_s: f64,
    tau_t: f64,
    epoch: usize,
}

/// Single-file checkpoint: one JSON header line, then the raw K*d f32
/// little-endian prototype matrix.
pub fn save_checkpoint(protos: &PrototypeSet, epoch: usize, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        k: protos.k(),
        d: protos.d(),
        tau_s: protos.tau_s,
        tau_t: protos.tau_t,
        epoch,
    };
    let mut bytes = serde_json::to_vec(&header).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    bytes.push(b'\n');
    for &v in protos.rows() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(PrototypeSet, usize)> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: "missing header line".into(),
        })?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
    let body = &bytes[newline + 1..];
    let expected = header.k * header.d * 4;
    if body.len() != expected {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("expected {expected} matrix bytes, found {}", body.len()),
        });
    }
    let mut rows = Vec::with_capacity(header.k * header.d);
    for chunk in body.chunks_exact(4) {
        rows.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
    }
    let protos = PrototypeSet::new(rows, header.k, header.d, header.tau_s, header.tau_t)?;
    Ok((protos, header.epoch))
}
