//! Differentiable soft K-means over node embeddings.
//!
//! The layer alternates a softmax assignment step over cosine similarities
//! with a weighted-mean centroid step, for a fixed number of iterations.
//! Gradients flow only through the final assignment/centroid pair; the
//! centroids that pair starts from are treated as constants.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GicError, Result};
use crate::kernels::{cosine_rows, dot, matmul, norm, sigmoid, DenseMatrix};

/// Number of assignment/centroid update pairs per forward pass.
pub const CLUSTER_ITERATIONS: usize = 10;

/// Clusters whose total soft mass falls below this keep their old centroid.
pub const EMPTY_CLUSTER_MASS: f64 = 1e-12;

/// Sign applied to `β·cos` inside the assignment softmax.
///
/// `Plus` assigns nodes to their most similar centroid (K-means behaviour).
/// `Minus` is the literal `exp(−β·sim)` form, which favours the least
/// similar centroid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignSign {
    #[default]
    Plus,
    Minus,
}

impl AssignSign {
    pub fn factor(self) -> f64 {
        match self {
            AssignSign::Plus => 1.0,
            AssignSign::Minus => -1.0,
        }
    }
}

impl std::str::FromStr for AssignSign {
    type Err = GicError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" => Ok(AssignSign::Plus),
            "minus" => Ok(AssignSign::Minus),
            other => Err(GicError::Config(format!(
                "assign sign must be \"plus\" or \"minus\", got {other:?}"
            ))),
        }
    }
}

/// Output of the clustering layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    /// Final centroids `μ` (K×F′).
    pub centroids: DenseMatrix,
    /// Final soft assignments `r` (N×K); rows sum to one.
    pub assignments: DenseMatrix,
    /// Centroids the final update pair started from. Held constant by the
    /// backward pass.
    pub prev_centroids: DenseMatrix,
    pub beta: f64,
    pub sign: AssignSign,
    pub iterations: usize,
}

impl ClusterState {
    pub fn num_clusters(&self) -> usize {
        self.centroids.rows()
    }

    /// Writes `cluster.json` plus centroid and assignment CSVs into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| GicError::io(dir, e))?;
        let header = serde_json::json!({
            "num_clusters": self.num_clusters(),
            "embed_dim": self.centroids.cols(),
            "num_nodes": self.assignments.rows(),
            "beta": self.beta,
            "assign_sign": self.sign,
            "iterations": self.iterations,
            "centroids": "centroids.csv",
            "assignments": "assignments.csv",
        });
        let path = dir.join("cluster.json");
        std::fs::write(&path, serde_json::to_string_pretty(&header).expect("json"))
            .map_err(|e| GicError::io(&path, e))?;
        self.centroids.write_csv(&dir.join("centroids.csv"))?;
        self.assignments.write_csv(&dir.join("assignments.csv"))
    }
}

/// Picks `k` distinct nodes uniformly and returns their embeddings.
pub fn init_centroids<R: Rng + ?Sized>(h: &DenseMatrix, k: usize, rng: &mut R) -> Result<DenseMatrix> {
    let n = h.rows();
    if k == 0 || k > n {
        return Err(GicError::Config(format!(
            "cannot draw {k} initial centroids from {n} nodes"
        )));
    }
    let picks = rand::seq::index::sample(rng, n, k).into_vec();
    Ok(h.select_rows(&picks))
}

/// `r_ik = softmax_k(sign·β·cos(h_i, μ_k))`.
pub fn soft_assign(h: &DenseMatrix, mu: &DenseMatrix, beta: f64, sign: AssignSign) -> Result<DenseMatrix> {
    let cos = cosine_rows(h, mu)?;
    Ok(softmax_rows(&cos, sign.factor() * beta))
}

fn softmax_rows(sim: &DenseMatrix, scale: f64) -> DenseMatrix {
    let mut out = sim.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row
            .iter()
            .map(|&s| scale * s)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for s in row.iter_mut() {
            *s = (scale * *s - max).exp();
            total += *s;
        }
        row.iter_mut().for_each(|s| *s /= total);
    }
    out
}

/// `μ_k = Σ_i r_ik h_i / Σ_i r_ik`; clusters with negligible mass keep
/// their row of `prev`.
pub fn update_centroids(h: &DenseMatrix, r: &DenseMatrix, prev: &DenseMatrix) -> Result<DenseMatrix> {
    if h.rows() != r.rows() || prev.rows() != r.cols() || prev.cols() != h.cols() {
        return Err(GicError::Shape(format!(
            "update_centroids: h {:?}, r {:?}, previous centroids {:?}",
            h.shape(),
            r.shape(),
            prev.shape()
        )));
    }
    let mut mu = matmul(r, h, true, false)?;
    let mass = cluster_mass(r);
    for (k, &m) in mass.iter().enumerate() {
        if m < EMPTY_CLUSTER_MASS {
            mu.row_mut(k).copy_from_slice(prev.row(k));
        } else {
            mu.row_mut(k).iter_mut().for_each(|x| *x /= m);
        }
    }
    Ok(mu)
}

fn cluster_mass(r: &DenseMatrix) -> Vec<f64> {
    let mut mass = vec![0.0; r.cols()];
    for row in r.row_iter() {
        for (m, &x) in mass.iter_mut().zip(row) {
            *m += x;
        }
    }
    mass
}

/// Runs `iterations` assign/update pairs from the given initial centroids.
pub fn run_clustering_from(
    h: &DenseMatrix,
    init: DenseMatrix,
    beta: f64,
    sign: AssignSign,
    iterations: usize,
) -> Result<ClusterState> {
    if iterations == 0 {
        return Err(GicError::Config("clustering needs at least one iteration".into()));
    }
    if beta.is_nan() || beta < 0.0 {
        return Err(GicError::Config(format!("beta must be non-negative, got {beta}")));
    }
    let mut mu = init;
    for _ in 1..iterations {
        let r = soft_assign(h, &mu, beta, sign)?;
        mu = update_centroids(h, &r, &mu)?;
    }
    let mut state = unrolled_step(h, mu, beta, sign)?;
    state.iterations = iterations;
    Ok(state)
}

/// Only the final (differentiated) pair, starting from `prev`.
pub fn unrolled_step(h: &DenseMatrix, prev: DenseMatrix, beta: f64, sign: AssignSign) -> Result<ClusterState> {
    let assignments = soft_assign(h, &prev, beta, sign)?;
    let centroids = update_centroids(h, &assignments, &prev)?;
    Ok(ClusterState {
        centroids,
        assignments,
        prev_centroids: prev,
        beta,
        sign,
        iterations: 1,
    })
}

/// Random initialization followed by [`CLUSTER_ITERATIONS`] update pairs.
pub fn run_clustering<R: Rng + ?Sized>(
    h: &DenseMatrix,
    k: usize,
    beta: f64,
    sign: AssignSign,
    rng: &mut R,
) -> Result<ClusterState> {
    let init = init_centroids(h, k, rng)?;
    run_clustering_from(h, init, beta, sign, CLUSTER_ITERATIONS)
}

/// Per-node cluster summaries `z_i = σ(Σ_k r_ik μ_k)`.
pub fn node_cluster_summaries(r: &DenseMatrix, mu: &DenseMatrix) -> Result<DenseMatrix> {
    if r.cols() != mu.rows() {
        return Err(GicError::Shape(format!(
            "node_cluster_summaries: r is {:?} but μ is {:?}",
            r.shape(),
            mu.shape()
        )));
    }
    Ok(matmul(r, mu, false, false)?.map(sigmoid))
}

/// Gradient w.r.t. `h` of a loss that depends on the layer only through
/// `z = σ(r·μ)`, given `dz = ∂loss/∂z`.
///
/// Differentiates `r = soft_assign(h, prev)`, `μ = update_centroids(h, r)`
/// and `z`; `prev` and every earlier iteration are constants.
pub fn clustering_backward(h: &DenseMatrix, state: &ClusterState, dz: &DenseMatrix) -> Result<DenseMatrix> {
    let r = &state.assignments;
    let mu = &state.centroids;
    let prev = &state.prev_centroids;
    let (n, f) = h.shape();
    let k = mu.rows();
    if dz.shape() != (n, f) || r.shape() != (n, k) || prev.shape() != (k, f) {
        return Err(GicError::Shape(format!(
            "clustering_backward: h {:?}, dz {:?}, r {:?}, μ {:?}",
            h.shape(),
            dz.shape(),
            r.shape(),
            mu.shape()
        )));
    }

    // z = σ(y), y = r·μ
    let z = node_cluster_summaries(r, mu)?;
    let mut dy = dz.clone();
    for (d, &zv) in dy.as_mut_slice().iter_mut().zip(z.as_slice()) {
        *d *= zv * (1.0 - zv);
    }
    let mut dr = matmul(&dy, mu, false, true)?;
    let dmu = matmul(r, &dy, true, false)?;

    // μ_k = Σ_i r_ik h_i / M_k
    let mass = cluster_mass(r);
    let dmu_mu: Vec<f64> = (0..k).map(|kk| dot(dmu.row(kk), mu.row(kk))).collect();
    let mut dh = DenseMatrix::zeros(n, f);
    for j in 0..n {
        let (hj, rj) = (h.row(j), r.row(j));
        let drj = dr.row_mut(j);
        let dhj = dh.row_mut(j);
        for (kk, &m) in mass.iter().enumerate() {
            if m < EMPTY_CLUSTER_MASS {
                continue;
            }
            let dmu_k = dmu.row(kk);
            drj[kk] += (dot(dmu_k, hj) - dmu_mu[kk]) / m;
            let scale = rj[kk] / m;
            for (d, &g) in dhj.iter_mut().zip(dmu_k) {
                *d += scale * g;
            }
        }
    }

    // r_j = softmax(sign·β·c_j), c_jk = cos(h_j, prev_k)
    let scale = state.sign.factor() * state.beta;
    let mut dc = DenseMatrix::zeros(n, k);
    for j in 0..n {
        let rj = r.row(j);
        let drj = dr.row(j);
        let inner: f64 = rj.iter().zip(drj).map(|(a, b)| a * b).sum();
        for kk in 0..k {
            dc.set(j, kk, scale * rj[kk] * (drj[kk] - inner));
        }
    }
    let cos = cosine_rows(h, prev)?;
    let mut prev_unit = prev.clone();
    for kk in 0..k {
        let row = prev_unit.row_mut(kk);
        let nv = norm(row);
        if nv > 0.0 {
            row.iter_mut().for_each(|x| *x /= nv);
        } else {
            row.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let prev_live: Vec<bool> = prev.row_iter().map(|row| norm(row) > 0.0).collect();
    let toward = matmul(&dc, &prev_unit, false, false)?;
    for j in 0..n {
        let hj = h.row(j);
        let hn = norm(hj);
        if hn == 0.0 {
            continue;
        }
        let radial: f64 = (0..k)
            .filter(|&kk| prev_live[kk])
            .map(|kk| dc.get(j, kk) * cos.get(j, kk))
            .sum();
        let t = toward.row(j);
        for ((d, &tp), &hp) in dh.row_mut(j).iter_mut().zip(t).zip(hj) {
            *d += tp / hn - radial * hp / (hn * hn);
        }
    }
    Ok(dh)
}

/// Mean Shannon entropy (nats) of the rows of `r`.
pub fn mean_row_entropy(r: &DenseMatrix) -> f64 {
    let total: f64 = r
        .row_iter()
        .map(|row| row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum::<f64>())
        .sum();
    total / r.rows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_cluster_assigns_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random(&mut rng, 6, 3);
        let r = soft_assign(&h, &random(&mut rng, 1, 3), 10.0, AssignSign::Plus).unwrap();
        assert!(r.as_slice().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn equidistant_point_splits_evenly() {
        let h = DenseMatrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let mu = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let r = soft_assign(&h, &mu, 50.0, AssignSign::Plus).unwrap();
        assert_eq!(r.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn soft_assign_matches_scalar_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random(&mut rng, 7, 4);
        let mu = random(&mut rng, 3, 4);
        for sign in [AssignSign::Plus, AssignSign::Minus] {
            let r = soft_assign(&h, &mu, 3.5, sign).unwrap();
            for i in 0..7 {
                let logits: Vec<f64> = (0..3)
                    .map(|k| {
                        let (a, b) = (h.row(i), mu.row(k));
                        let c = crate::kernels::dot(a, b) / (norm(a) * norm(b));
                        sign.factor() * 3.5 * c
                    })
                    .collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                for k in 0..3 {
                    assert!((r.get(i, k) - logits[k].exp() / z).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn centroids_hard_and_uniform() {
        let h = DenseMatrix::from_rows(&[[1.0, 0.0], [3.0, 2.0], [5.0, 5.0]]).unwrap();
        let hard = DenseMatrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let prev = DenseMatrix::zeros(2, 2);
        let mu = update_centroids(&h, &hard, &prev).unwrap();
        assert_eq!(mu.row(0), &[2.0, 1.0]);
        assert_eq!(mu.row(1), &[5.0, 5.0]);

        let uniform = DenseMatrix::filled(3, 2, 0.5);
        let mu = update_centroids(&h, &uniform, &prev).unwrap();
        assert!((mu.get(0, 0) - 3.0).abs() < 1e-15 && (mu.get(1, 1) - 7.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_cluster_keeps_previous_centroid() {
        let h = DenseMatrix::from_rows(&[[1.0, 0.0], [3.0, 2.0]]).unwrap();
        let r = DenseMatrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let prev = DenseMatrix::from_rows(&[[9.0, 9.0], [7.0, -7.0]]).unwrap();
        let mu = update_centroids(&h, &r, &prev).unwrap();
        assert_eq!(mu.row(1), &[7.0, -7.0]);
    }

    #[test]
    fn update_centroids_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random(&mut rng, 9, 4);
        let r = soft_assign(&h, &random(&mut rng, 3, 4), 2.0, AssignSign::Plus).unwrap();
        let mu = update_centroids(&h, &r, &DenseMatrix::zeros(3, 4)).unwrap();
        for k in 0..3 {
            let m: f64 = (0..9).map(|i| r.get(i, k)).sum();
            for p in 0..4 {
                let s: f64 = (0..9).map(|i| r.get(i, k) * h.get(i, p)).sum();
                assert!((mu.get(k, p) - s / m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_uses_distinct_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random(&mut rng, 5, 2);
        let mu = init_centroids(&h, 5, &mut stream(1, Stream::ClusterInit)).unwrap();
        let mut got: Vec<Vec<u64>> = mu.row_iter().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect();
        let mut want: Vec<Vec<u64>> = h.row_iter().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
        assert_eq!(
            init_centroids(&h, 2, &mut stream(9, Stream::ClusterInit)).unwrap(),
            init_centroids(&h, 2, &mut stream(9, Stream::ClusterInit)).unwrap()
        );
        assert!(init_centroids(&h, 6, &mut rng).is_err());
    }

    #[test]
    fn identical_rows_give_uniform_assignments() {
        let h = DenseMatrix::filled(4, 3, 0.7);
        let s = run_clustering(&h, 3, 10.0, AssignSign::Plus, &mut stream(2, Stream::ClusterInit)).unwrap();
        for row in s.centroids.row_iter() {
            for &x in row {
                assert!((x - 0.7).abs() < 1e-15);
            }
        }
        for &x in s.assignments.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn large_beta_with_k_equal_n_is_identity_like() {
        let h = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.2]]).unwrap();
        let s = run_clustering(&h, 3, 1e4, AssignSign::Plus, &mut stream(5, Stream::ClusterInit)).unwrap();
        for row in s.assignments.row_iter() {
            assert!(row.iter().cloned().fold(0.0, f64::max) > 1.0 - 1e-9);
        }
        let owners: std::collections::HashSet<usize> = s
            .assignments
            .row_iter()
            .map(|row| row.iter().position(|&x| x > 0.5).unwrap())
            .collect();
        assert_eq!(owners.len(), 3);
    }

    #[test]
    fn zero_beta_kills_the_assignment_path() {
        // With β = 0, r is uniform and independent of h; only the centroid
        // averaging path contributes, which for uniform r gives dμ_k/K/N per node.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = random(&mut rng, 5, 3);
        let s = run_clustering_from(&h, random(&mut rng, 2, 3), 0.0, AssignSign::Plus, 3).unwrap();
        let dz = random(&mut rng, 5, 3);
        let dh = clustering_backward(&h, &s, &dz).unwrap();
        let z = node_cluster_summaries(&s.assignments, &s.centroids).unwrap();
        // All z rows are equal (uniform r, equal centroids) so dh_j = Σ_i dy_i / N.
        let mut expect = [0.0; 3];
        for i in 0..5 {
            for p in 0..3 {
                let zv = z.get(i, p);
                expect[p] += dz.get(i, p) * zv * (1.0 - zv) / 5.0;
            }
        }
        for j in 0..5 {
            for p in 0..3 {
                assert!((dh.get(j, p) - expect[p]).abs() < 1e-14);
            }
        }
    }
}
