//! Downstream evaluation: logistic-regression node classification,
//! inner-product link prediction, K-means clustering and the associated
//! metrics.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GicError, Result};
use crate::graph::ClassificationSplit;
use crate::kernels::{dot, sigmoid, DenseMatrix};
use crate::model::glorot_uniform;

pub const LOGREG_LEARNING_RATE: f64 = 0.01;
pub const LOGREG_EPOCHS: usize = 1000;

/// Softmax regression parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegParams {
    /// C×F′
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl LogRegParams {
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (c, w) in self.weight.row_iter().enumerate() {
            let s = dot(w, x) + self.bias[c];
            if s > best_score {
                best_score = s;
                best = c;
            }
        }
        best
    }
}

/// Full-batch softmax regression trained with Adam (no regularization).
pub fn train_logreg<R: Rng + ?Sized>(
    x: &DenseMatrix,
    y: &[usize],
    num_classes: usize,
    epochs: usize,
    lr: f64,
    rng: &mut R,
) -> Result<LogRegParams> {
    use crate::train::{ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
    let (n, f) = x.shape();
    if y.len() != n || n == 0 {
        return Err(GicError::Shape(format!("{} labels for {n} training rows", y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
        return Err(GicError::Data(format!("label {bad} outside 0..{num_classes}")));
    }
    // Glorot over (fan_in = F′, fan_out = C), stored class-major.
    let mut weight = glorot_uniform(f, num_classes, rng).transpose();
    let mut bias = vec![0.0; num_classes];
    let mut m_w = vec![0.0; num_classes * f];
    let mut v_w = vec![0.0; num_classes * f];
    let mut m_b = vec![0.0; num_classes];
    let mut v_b = vec![0.0; num_classes];
    let mut probs = vec![0.0; num_classes];
    for t in 1..=epochs {
        let mut gw = vec![0.0; num_classes * f];
        let mut gb = vec![0.0; num_classes];
        for (i, xi) in x.row_iter().enumerate() {
            let mut max = f64::NEG_INFINITY;
            for c in 0..num_classes {
                probs[c] = dot(weight.row(c), xi) + bias[c];
                max = max.max(probs[c]);
            }
            let mut total = 0.0;
            for p in probs.iter_mut() {
                *p = (*p - max).exp();
                total += *p;
            }
            for c in 0..num_classes {
                let g = (probs[c] / total - if y[i] == c { 1.0 } else { 0.0 }) / n as f64;
                gb[c] += g;
                for (acc, &xv) in gw[c * f..(c + 1) * f].iter_mut().zip(xi) {
                    *acc += g * xv;
                }
            }
        }
        let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
        let apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for j in 0..p.len() {
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
            }
        };
        apply(weight.as_mut_slice(), &gw, &mut m_w, &mut v_w);
        apply(&mut bias, &gb, &mut m_b, &mut v_b);
    }
    Ok(LogRegParams { weight, bias })
}

fn accuracy_on(model: &LogRegParams, h: &DenseMatrix, ids: &[usize], labels: &[usize]) -> f64 {
    if ids.is_empty() {
        return 0.0;
    }
    let correct = ids
        .iter()
        .filter(|&&i| model.predict(h.row(i)) == labels[i])
        .count();
    correct as f64 / ids.len() as f64
}

/// Train/validation/test accuracies of one classifier fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationResult {
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

/// Fits the classifier on the split's training nodes and scores the
/// validation and test nodes. `h` should be row-normalized.
pub fn classify_nodes_full<R: Rng + ?Sized>(
    h: &DenseMatrix,
    split: &ClassificationSplit,
    labels: &[usize],
    num_classes: usize,
    rng: &mut R,
) -> Result<ClassificationResult> {
    if labels.len() != h.rows() {
        return Err(GicError::Shape(format!(
            "{} labels for {} embeddings",
            labels.len(),
            h.rows()
        )));
    }
    let mut present = vec![false; num_classes];
    split.train.iter().for_each(|&i| present[labels[i]] = true);
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(GicError::Data(format!(
            "class {missing} has no node in the training set"
        )));
    }
    let x = h.select_rows(&split.train);
    let y: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    let model = train_logreg(&x, &y, num_classes, LOGREG_EPOCHS, LOGREG_LEARNING_RATE, rng)?;
    Ok(ClassificationResult {
        val_accuracy: accuracy_on(&model, h, &split.val, labels),
        test_accuracy: accuracy_on(&model, h, &split.test, labels),
    })
}

/// Test accuracy of a logistic-regression classifier trained on the split.
pub fn classify_nodes<R: Rng + ?Sized>(
    h: &DenseMatrix,
    split: &ClassificationSplit,
    labels: &[usize],
    num_classes: usize,
    rng: &mut R,
) -> Result<f64> {
    classify_nodes_full(h, split, labels, num_classes, rng).map(|r| r.test_accuracy)
}

/// Edge probabilities `σ(h_iᵀ h_j)`.
pub fn link_scores(h: &DenseMatrix, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let n = h.rows();
    pairs
        .iter()
        .map(|&(i, j)| {
            if i >= n || j >= n {
                Err(GicError::Data(format!("pair ({i}, {j}) outside 0..{n}")))
            } else {
                Ok(sigmoid(dot(h.row(i), h.row(j))))
            }
        })
        .collect()
}

fn require_nonempty(pos: &[f64], neg: &[f64], what: &str) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(GicError::Data(format!(
            "{what} needs positive and negative scores ({} / {} given)",
            pos.len(),
            neg.len()
        )));
    }
    Ok(())
}

/// Area under the ROC curve in Mann–Whitney form: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    require_nonempty(pos, neg, "AUC")?;
    let mut neg_sorted = neg.to_vec();
    neg_sorted.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &p in pos {
        let below = neg_sorted.partition_point(|&x| x < p);
        let not_above = neg_sorted.partition_point(|&x| x <= p);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (pos.len() as f64 * neg.len() as f64))
}

/// Average precision over the ranking by descending score; on equal scores
/// negatives are ranked first.
pub fn average_precision(pos: &[f64], neg: &[f64]) -> Result<f64> {
    require_nonempty(pos, neg, "average precision")?;
    let mut items: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    items.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let total_pos = pos.len() as f64;
    let mut tp = 0.0;
    let mut ap = 0.0;
    for (rank, &(_, is_pos)) in items.iter().enumerate() {
        if is_pos {
            tp += 1.0;
            ap += (tp / (rank + 1) as f64) / total_pos;
        }
    }
    Ok(ap)
}

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITER: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid; the lowest index wins ties.
fn nearest(x: &[f64], centroids: &DenseMatrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.row_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// k-means++ seeding.
fn seed_centroids<R: Rng + ?Sized>(h: &DenseMatrix, k: usize, rng: &mut R) -> DenseMatrix {
    let n = h.rows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = h.row_iter().map(|x| sq_dist(x, h.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // All remaining mass is zero: take any point not yet chosen.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, x) in h.row_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, h.row(next)));
        }
    }
    h.select_rows(&chosen)
}

/// One Lloyd run from `centroids`; returns labels and within-cluster SSE.
pub fn lloyd(h: &DenseMatrix, mut centroids: DenseMatrix, max_iter: usize) -> (Vec<usize>, f64) {
    let n = h.rows();
    let k = centroids.rows();
    let mut labels: Vec<usize> = h.row_iter().map(|x| nearest(x, &centroids).0).collect();
    for _ in 0..max_iter {
        let mut sums = DenseMatrix::zeros(k, h.cols());
        let mut counts = vec![0usize; k];
        for (i, x) in h.row_iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, &v) in sums.row_mut(labels[i]).iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        let next: Vec<usize> = h.row_iter().map(|x| nearest(x, &centroids).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let sse = (0..n).map(|i| sq_dist(h.row(i), centroids.row(labels[i]))).sum();
    (labels, sse)
}

/// Hard K-means with k-means++ seeding and restarts, keeping the run with
/// the lowest within-cluster sum of squares.
pub fn kmeans_cluster<R: Rng + ?Sized>(h: &DenseMatrix, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = h.rows();
    if k == 0 || k > n {
        return Err(GicError::Config(format!("cannot form {k} clusters from {n} points")));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let init = seed_centroids(h, k, rng);
        let (labels, sse) = lloyd(h, init, KMEANS_MAX_ITER);
        if best.as_ref().is_none_or(|(_, s)| sse < *s) {
            best = Some((labels, sse));
        }
    }
    Ok(best.expect("at least one restart").0)
}

/// Contingency counts `table[a][b]` between two labelings, each compacted
/// to `0..#distinct` in order of first appearance of the sorted label.
fn contingency(a: &[usize], b: &[usize]) -> Vec<Vec<u64>> {
    let compact = |l: &[usize]| -> (Vec<usize>, usize) {
        let mut ids: Vec<usize> = l.to_vec();
        ids.sort_unstable();
        ids.dedup();
        (l.iter().map(|x| ids.binary_search(x).unwrap()).collect(), ids.len())
    };
    let (ca, na) = compact(a);
    let (cb, nb) = compact(b);
    let mut table = vec![vec![0u64; nb]; na];
    for (&x, &y) in ca.iter().zip(&cb) {
        table[x][y] += 1;
    }
    table
}

/// Maximum-weight perfect matching on a square matrix (Hungarian method,
/// O(n³)). Returns `assignment[row] = column`.
pub fn hungarian_max(weights: &[Vec<f64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let max_w = weights
        .iter()
        .flatten()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    // Minimize cost = max − weight with 1-based potentials.
    let cost = |i: usize, j: usize| max_w - weights[i - 1][j - 1];
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Accuracy / NMI / ARI of a predicted partition against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringScores {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

/// Clustering accuracy under the best one-to-one matching of predicted
/// clusters to classes.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let table = contingency(pred, truth);
    let size = table.len().max(table.first().map_or(0, |r| r.len()));
    let mut square = vec![vec![0.0; size]; size];
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            square[i][j] = c as f64;
        }
    }
    let assign = hungarian_max(&square);
    let matched: f64 = assign.iter().enumerate().map(|(i, &j)| square[i][j]).sum();
    Ok(matched / pred.len() as f64)
}

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(GicError::Shape(format!(
            "{} predicted labels vs {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(GicError::Data("clustering metrics need at least one node".into()));
    }
    Ok(())
}

fn entropy(counts: impl Iterator<Item = u64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization.
///
/// Conventions: two single-cluster labelings score 1; otherwise a zero
/// denominator scores 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let table = contingency(pred, truth);
    let n = pred.len() as f64;
    let rows: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let h_pred = entropy(rows.iter().copied(), n);
    let h_truth = entropy(cols.iter().copied(), n);
    if rows.len() == 1 && cols.len() == 1 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += (c / n) * ((n * c) / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    let denom = 0.5 * (h_pred + h_truth);
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn comb2(x: u64) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// Adjusted Rand index (Hubert–Arabie).
///
/// When the expected and maximum index coincide (both partitions trivial in
/// the same way) the score is 1.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let table = contingency(pred, truth);
    let n = pred.len() as u64;
    let index: f64 = table.iter().flatten().map(|&c| comb2(c)).sum();
    let a: f64 = table.iter().map(|r| comb2(r.iter().sum())).sum();
    let b: f64 = (0..table[0].len())
        .map(|j| comb2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = comb2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = a * b / total;
    let max = 0.5 * (a + b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

pub fn clustering_metrics(pred: &[usize], truth: &[usize]) -> Result<ClusteringScores> {
    Ok(ClusteringScores {
        acc: clustering_accuracy(pred, truth)?,
        nmi: nmi(pred, truth)?,
        ari: ari(pred, truth)?,
    })
}

/// Mean silhouette coefficient with Euclidean distances.
///
/// Points alone in their cluster score 0, as does any point with
/// `max(a, b) = 0`.
pub fn silhouette(h: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    let n = h.rows();
    if labels.len() != n {
        return Err(GicError::Shape(format!("{} labels for {n} points", labels.len())));
    }
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(GicError::Data("silhouette needs at least two distinct labels".into()));
    }
    let compact: Vec<usize> = labels.iter().map(|l| ids.binary_search(l).unwrap()).collect();
    let k = ids.len();
    let mut sizes = vec![0usize; k];
    compact.iter().for_each(|&c| sizes[c] += 1);

    let total: f64 = (0..n)
        .map(|i| {
            let own = compact[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[compact[j]] += sq_dist(h.row(i), h.row(j)).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .sum();
    Ok(total / n as f64)
}

/// Mean and population standard deviation of repeated measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            values,
            mean,
            std: var.sqrt(),
        }
    }
}

/// Named metrics for one task, each summarized over repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub task: String,
    pub metrics: BTreeMap<String, MetricSummary>,
}
