//! Fixtures and independent brute-force oracles shared by the integration
//! and acceptance tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Output;

use gic::cluster::AssignSign;
use gic::graph::{normalize_adjacency, random_permutation, Adjacency, AttributedGraph};
use gic::kernels::DenseMatrix;
use gic::model::{backward, forward, loss_total, ClusterSeed, ModelParams, ObjectiveConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Planted-partition graph: node `i` belongs to class `i % classes`; edges
/// appear with probability `p_in` within a class and `p_out` across.
/// Features are sparse binary with a class-specific block of likely-active
/// columns plus background noise.
pub fn planted_graph(n: usize, classes: usize, features: usize, p_in: f64, p_out: f64, seed: u64) -> AttributedGraph {
    let mut r = rng(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if r.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let block = (features / classes).max(1);
    let mut x = DenseMatrix::zeros(n, features);
    for i in 0..n {
        for f in 0..features {
            let own = f / block == labels[i];
            let p = if own { 0.35 } else { 0.03 };
            if r.gen::<f64>() < p {
                x.set(i, f, 1.0);
            }
        }
    }
    let adj = Adjacency::from_edges(n, &edges).unwrap();
    AttributedGraph::new(adj, x, Some(labels), classes).unwrap()
}

/// Dense random graph with real-valued features, unlabeled.
pub fn random_graph(n: usize, f: usize, p_edge: f64, seed: u64) -> AttributedGraph {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.gen::<f64>() < p_edge {
                edges.push((i, j));
            }
        }
    }
    let data = (0..n * f).map(|_| r.gen_range(-1.0..1.0)).collect();
    let x = DenseMatrix::from_vec(n, f, data).unwrap();
    AttributedGraph::new(Adjacency::from_edges(n, &edges).unwrap(), x, None, 0).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

/// Per-tensor relative errors between analytic and finite-difference
/// gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub theta: f64,
    pub prelu_slope: f64,
    pub bilinear_w: f64,
    /// |loss(frozen-prefix forward) − loss(original forward)| at the
    /// unperturbed parameters; must be 0 for the oracle to be meaningful.
    pub replay_gap: f64,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.theta.max(self.prelu_slope).max(self.bilinear_w)
    }
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Compares `backward` with central differences of `loss_total`.
///
/// The loss is re-evaluated with the clustering layer replayed from the
/// centroids its final update started from, so the oracle differentiates
/// exactly the function whose gradient `backward` defines.
pub fn gradient_check(seed: u64, n: usize, f: usize, f_out: usize, k: usize, alpha: f64, sign: AssignSign) -> GradCheck {
    let mut r = rng(seed);
    let graph = random_graph(n, f, 0.2, seed ^ 0x9e37_79b9);
    let adj = normalize_adjacency(&graph);
    let x = graph.features();
    let mut params = ModelParams::init(f, f_out, &mut r);
    params.prelu_slope = r.gen_range(0.1..0.4);
    let perm = random_permutation(n, &mut r);
    let objective = ObjectiveConfig {
        alpha,
        beta: r.gen_range(1.0..10.0),
        num_clusters: k,
        assign_sign: sign,
    };

    let cache = forward(&params, &adj, x, &perm, &objective, ClusterSeed::Sample(&mut r)).unwrap();
    let base_loss = loss_total(&cache, alpha).unwrap();
    let grads = backward(&params, &adj, x, &cache, alpha).unwrap();
    let prev = cache.cluster.as_ref().map(|c| c.prev_centroids.clone());

    let loss_at = |p: &ModelParams| -> f64 {
        let seed: ClusterSeed<'_, ChaCha8Rng> = match &prev {
            Some(m) => ClusterSeed::FrozenPrefix(m.clone()),
            None => ClusterSeed::Init(DenseMatrix::zeros(0, 0)),
        };
        let c = forward(p, &adj, x, &perm, &objective, seed).unwrap();
        loss_total(&c, alpha).unwrap()
    };
    let replay_gap = (loss_at(&params) - base_loss).abs();

    let h = 1e-6;
    let central = |set: &dyn Fn(&mut ModelParams, f64)| -> f64 {
        let mut plus = params.clone();
        set(&mut plus, h);
        let mut minus = params.clone();
        set(&mut minus, -h);
        (loss_at(&plus) - loss_at(&minus)) / (2.0 * h)
    };

    let mut fd_theta = Vec::new();
    for i in 0..f {
        for j in 0..f_out {
            fd_theta.push(central(&|p, d| {
                let v = p.theta.get(i, j);
                p.theta.set(i, j, v + d)
            }));
        }
    }
    let mut fd_w = Vec::new();
    for i in 0..f_out {
        for j in 0..f_out {
            fd_w.push(central(&|p, d| {
                let v = p.bilinear_w.get(i, j);
                p.bilinear_w.set(i, j, v + d)
            }));
        }
    }
    let fd_slope = central(&|p, d| p.prelu_slope += d);

    GradCheck {
        theta: rel_err(grads.theta.as_slice(), &fd_theta),
        prelu_slope: rel_err(&[grads.prelu_slope], &[fd_slope]),
        bilinear_w: rel_err(grads.bilinear_w.as_slice(), &fd_w),
        replay_gap,
    }
}

// ---------------------------------------------------------------------------
// Brute-force metric oracles.

/// Fraction of (positive, negative) pairs with the positive scored higher;
/// ties count one half.
pub fn auc_oracle(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &q in neg {
            if p > q {
                wins += 1.0;
            } else if p == q {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Average precision with negatives ranked ahead of equally scored
/// positives, computed by counting rather than sorting.
pub fn ap_oracle(pos: &[f64], neg: &[f64]) -> f64 {
    let mut groups: Vec<f64> = pos.to_vec();
    groups.sort_by(f64::total_cmp);
    groups.dedup();
    let mut total = 0.0;
    for &s in &groups {
        let pos_above = pos.iter().filter(|&&p| p > s).count() as f64;
        let neg_at_or_above = neg.iter().filter(|&&q| q >= s).count() as f64;
        let tied = pos.iter().filter(|&&p| p == s).count();
        for j in 1..=tied {
            let hits = pos_above + j as f64;
            total += hits / (hits + neg_at_or_above);
        }
    }
    total / pos.len() as f64
}

fn entropy_of(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// NMI from joint label frequencies, arithmetic-mean normalization.
pub fn nmi_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    if ca.len() == 1 && cb.len() == 1 {
        return 1.0;
    }
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let pxy = c as f64 / n;
        let px = ca[&x] as f64 / n;
        let py = cb[&y] as f64 / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    let denom = 0.5 * (entropy_of(ca.values().copied(), n) + entropy_of(cb.values().copied(), n));
    if denom <= 0.0 {
        0.0
    } else {
        (mi / denom).clamp(0.0, 1.0)
    }
}

/// ARI from explicit pair counting over all node pairs.
pub fn ari_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut neither) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..n {
        for j in i + 1..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let denom = (both + only_a) * (only_a + neither) + (both + only_b) * (only_b + neither);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (both * neither - only_a * only_b) / denom
}

/// Mean silhouette from explicit per-point distance sums.
pub fn silhouette_oracle(h: &DenseMatrix, labels: &[usize]) -> f64 {
    let n = h.rows();
    let dist = |i: usize, j: usize| -> f64 {
        h.row(i)
            .iter()
            .zip(h.row(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let mut total = 0.0;
    for i in 0..n {
        let mates: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if mates.is_empty() {
            continue;
        }
        let a = mates.iter().map(|&j| dist(i, j)).sum::<f64>() / mates.len() as f64;
        let mut b = f64::INFINITY;
        for &c in &distinct {
            if c == labels[i] {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
            b = b.min(members.iter().map(|&j| dist(i, j)).sum::<f64>() / members.len() as f64);
        }
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

// ---------------------------------------------------------------------------
// CLI helpers.

pub fn gic_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_gic"))
}

pub fn run_gic(args: &[&str]) -> Output {
    std::process::Command::new(gic_bin())
        .args(args)
        .output()
        .expect("spawn gic")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// The `stable` member of a report file, re-serialized canonically.
pub fn stable_part(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    serde_json::to_string(&v["stable"]).unwrap()
}
