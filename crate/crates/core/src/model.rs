//! The GIC model: one-layer GCN encoder, graph and cluster summaries, the
//! two discriminators, the blended contrastive loss and its backward pass.
//!
//! The loss is in minimization form,
//!
//! ```text
//! L = −[ α·L_global + (1 − α)·L_cluster ]
//! L_global  = mean_i log D1(h_i, s) + mean_i log(1 − D1(h̃_i, s))
//! L_cluster = mean_i log DK(h_i, z_i) + mean_i log(1 − DK(h̃_i, z_i))
//! ```
//!
//! with `D1(h, s) = σ(hᵀ W s)`, `DK(h, z) = σ(hᵀ z)`, `s = σ(mean_i h_i)`
//! and `z_i = σ(Σ_k r_ik μ_k)`. Fake embeddings `h̃` come from the same
//! encoder applied to row-shuffled features; they are scored against the
//! real `s` and the real `z_i`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{
    clustering_backward, init_centroids, node_cluster_summaries, run_clustering_from, unrolled_step,
    AssignSign, ClusterState, CLUSTER_ITERATIONS,
};
use crate::error::{GicError, Result};
use crate::kernels::{
    dot, prelu, prelu_backward, sigmoid, spmm, DenseMatrix, FeatureOperand, SparseMatrixCsr,
};

/// Probabilities are clamped into `[ε, 1 − ε]` before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

pub const PRELU_INIT_SLOPE: f64 = 0.25;

/// Learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Encoder weight Θ (F×F′).
    pub theta: DenseMatrix,
    pub prelu_slope: f64,
    /// Bilinear discriminator weight W (F′×F′).
    pub bilinear_w: DenseMatrix,
}

/// Uniform Glorot initialization for a `fan_in × fan_out` matrix.
pub fn glorot_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> DenseMatrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    DenseMatrix::from_vec(fan_in, fan_out, data).expect("sized buffer")
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(num_features: usize, embed_dim: usize, rng: &mut R) -> Self {
        let theta = glorot_uniform(num_features, embed_dim, rng);
        let bilinear_w = glorot_uniform(embed_dim, embed_dim, rng);
        Self {
            theta,
            prelu_slope: PRELU_INIT_SLOPE,
            bilinear_w,
        }
    }

    pub fn num_features(&self) -> usize {
        self.theta.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.theta.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.prelu_slope.is_finite() && self.bilinear_w.is_finite()
    }
}

/// Gradients, shaped like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub theta: DenseMatrix,
    pub prelu_slope: f64,
    pub bilinear_w: DenseMatrix,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.prelu_slope.is_finite() && self.bilinear_w.is_finite()
    }
}

/// Objective hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub alpha: f64,
    pub beta: f64,
    pub num_clusters: usize,
    pub assign_sign: AssignSign,
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(GicError::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(GicError::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.num_clusters == 0 {
            return Err(GicError::Config("number of clusters must be positive".into()));
        }
        Ok(())
    }

    /// With α = 1 the cluster term has zero weight and the layer is skipped.
    pub fn uses_clusters(&self) -> bool {
        self.alpha < 1.0
    }
}

/// How the clustering layer obtains its starting centroids.
pub enum ClusterSeed<'a, R: Rng + ?Sized> {
    /// Sample initial centroids from the real embeddings, then run the full
    /// iteration count.
    Sample(&'a mut R),
    /// Run the full iteration count from these centroids.
    Init(DenseMatrix),
    /// Run only the final update pair from these centroids.
    FrozenPrefix(DenseMatrix),
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Corruption permutation: fake row `i` uses real feature row `perm[i]`.
    pub perm: Vec<usize>,
    pub pre_real: DenseMatrix,
    pub pre_fake: DenseMatrix,
    pub h_real: DenseMatrix,
    pub h_fake: DenseMatrix,
    pub summary: Vec<f64>,
    pub cluster: Option<ClusterState>,
    pub node_summaries: Option<DenseMatrix>,
    pub p_global_real: Vec<f64>,
    pub p_global_fake: Vec<f64>,
    pub p_cluster_real: Vec<f64>,
    pub p_cluster_fake: Vec<f64>,
}

fn check_encoder_shapes<X: FeatureOperand + ?Sized>(params: &ModelParams, norm_adj: &SparseMatrixCsr, x: &X) -> Result<()> {
    if norm_adj.rows() != x.num_rows() || norm_adj.cols() != x.num_rows() || params.theta.rows() != x.num_cols() {
        return Err(GicError::Shape(format!(
            "encoder: adjacency {}x{}, features {}x{}, Θ {}x{}",
            norm_adj.rows(),
            norm_adj.cols(),
            x.num_rows(),
            x.num_cols(),
            params.theta.rows(),
            params.theta.cols()
        )));
    }
    Ok(())
}

/// `H = PReLU(Â_norm · X · Θ)`.
pub fn encode<X: FeatureOperand + ?Sized>(params: &ModelParams, norm_adj: &SparseMatrixCsr, x: &X) -> Result<DenseMatrix> {
    check_encoder_shapes(params, norm_adj, x)?;
    let pre = spmm(norm_adj, &x.mul(&params.theta)?)?;
    Ok(prelu(&pre, params.prelu_slope))
}

/// `s = σ(mean_i h_i)`.
pub fn global_summary(h: &DenseMatrix) -> Vec<f64> {
    h.column_means().into_iter().map(sigmoid).collect()
}

/// `D1(h, s) = σ(hᵀ W s)`.
pub fn disc_global(h: &[f64], s: &[f64], w: &DenseMatrix) -> f64 {
    sigmoid(bilinear(h, w, s))
}

/// `DK(h, z) = σ(hᵀ z)`.
pub fn disc_cluster(h: &[f64], z: &[f64]) -> f64 {
    sigmoid(dot(h, z))
}

fn bilinear(h: &[f64], w: &DenseMatrix, s: &[f64]) -> f64 {
    let ws = mat_vec(w, s);
    dot(h, &ws)
}

fn mat_vec(w: &DenseMatrix, v: &[f64]) -> Vec<f64> {
    w.row_iter().map(|r| dot(r, v)).collect()
}

fn mat_t_vec(w: &DenseMatrix, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (r, &vi) in w.row_iter().zip(v) {
        for (o, &x) in out.iter_mut().zip(r) {
            *o += x * vi;
        }
    }
    out
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Full forward pass on the real graph and its corruption `perm`.
pub fn forward<R: Rng + ?Sized, X: FeatureOperand + ?Sized>(
    params: &ModelParams,
    norm_adj: &SparseMatrixCsr,
    x: &X,
    perm: &[usize],
    objective: &ObjectiveConfig,
    seed: ClusterSeed<'_, R>,
) -> Result<ForwardCache> {
    check_encoder_shapes(params, norm_adj, x)?;
    let n = x.num_rows();
    if perm.len() != n {
        return Err(GicError::Shape(format!(
            "corruption permutation has {} entries for {n} nodes",
            perm.len()
        )));
    }
    objective.validate()?;

    // X̃Θ = P(XΘ): the fake pass reuses the real product.
    let xw = x.mul(&params.theta)?;
    let pre_real = spmm(norm_adj, &xw)?;
    let pre_fake = spmm(norm_adj, &xw.permute_rows(perm))?;
    let h_real = prelu(&pre_real, params.prelu_slope);
    let h_fake = prelu(&pre_fake, params.prelu_slope);

    let summary = global_summary(&h_real);
    let ws = mat_vec(&params.bilinear_w, &summary);
    let p_global_real: Vec<f64> = h_real.row_iter().map(|h| sigmoid(dot(h, &ws))).collect();
    let p_global_fake: Vec<f64> = h_fake.row_iter().map(|h| sigmoid(dot(h, &ws))).collect();

    let (cluster, node_summaries, p_cluster_real, p_cluster_fake) = if objective.uses_clusters() {
        let state = match seed {
            ClusterSeed::Sample(rng) => {
                let init = init_centroids(&h_real, objective.num_clusters, rng)?;
                run_clustering_from(&h_real, init, objective.beta, objective.assign_sign, CLUSTER_ITERATIONS)?
            }
            ClusterSeed::Init(init) => {
                run_clustering_from(&h_real, init, objective.beta, objective.assign_sign, CLUSTER_ITERATIONS)?
            }
            ClusterSeed::FrozenPrefix(prev) => {
                unrolled_step(&h_real, prev, objective.beta, objective.assign_sign)?
            }
        };
        let z = node_cluster_summaries(&state.assignments, &state.centroids)?;
        let pr: Vec<f64> = (0..n).map(|i| disc_cluster(h_real.row(i), z.row(i))).collect();
        let pf: Vec<f64> = (0..n).map(|i| disc_cluster(h_fake.row(i), z.row(i))).collect();
        (Some(state), Some(z), pr, pf)
    } else {
        (None, None, Vec::new(), Vec::new())
    };

    Ok(ForwardCache {
        perm: perm.to_vec(),
        pre_real,
        pre_fake,
        h_real,
        h_fake,
        summary,
        cluster,
        node_summaries,
        p_global_real,
        p_global_fake,
        p_cluster_real,
        p_cluster_fake,
    })
}

fn bce_term(real: &[f64], fake: &[f64]) -> f64 {
    let n = real.len() as f64;
    let pos: f64 = real.iter().map(|&p| clamp_prob(p).ln()).sum::<f64>() / n;
    let neg: f64 = fake.iter().map(|&p| (1.0 - clamp_prob(p)).ln()).sum::<f64>() / n;
    pos + neg
}

/// The minimized objective for a completed forward pass.
pub fn loss_total(cache: &ForwardCache, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(GicError::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let global = bce_term(&cache.p_global_real, &cache.p_global_fake);
    let blended = if alpha < 1.0 {
        if cache.cluster.is_none() {
            return Err(GicError::Config(
                "alpha < 1 needs a forward pass that ran the cluster layer".into(),
            ));
        }
        let cluster = bce_term(&cache.p_cluster_real, &cache.p_cluster_fake);
        alpha * global + (1.0 - alpha) * cluster
    } else {
        global
    };
    let loss = -blended;
    if !loss.is_finite() {
        return Err(GicError::NonFinite(format!("loss evaluated to {loss}")));
    }
    Ok(loss)
}

/// `∂L/∂logit` for a positive (`real = true`) or negative example with
/// weight `w`; zero where the probability is clamped.
#[inline]
fn logit_grad(p: f64, real: bool, w: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    if real {
        -w * (1.0 - p)
    } else {
        w * p
    }
}

/// Gradients of [`loss_total`] w.r.t. Θ, the PReLU slope and W.
///
/// The cluster layer is differentiated through its final update pair only
/// (see [`clustering_backward`]).
pub fn backward<X: FeatureOperand + ?Sized>(
    params: &ModelParams,
    norm_adj: &SparseMatrixCsr,
    x: &X,
    cache: &ForwardCache,
    alpha: f64,
) -> Result<Gradients> {
    check_encoder_shapes(params, norm_adj, x)?;
    let n = x.num_rows();
    let f_out = params.embed_dim();
    if cache.h_real.shape() != (n, f_out) || cache.perm.len() != n {
        return Err(GicError::Shape(format!(
            "cache holds {:?} embeddings; parameters and features imply {n}x{f_out}",
            cache.h_real.shape()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(GicError::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let nf = n as f64;

    let mut dh_real = DenseMatrix::zeros(n, f_out);
    let mut dh_fake = DenseMatrix::zeros(n, f_out);

    // Global discriminator.
    let w_global = alpha / nf;
    let ws = mat_vec(&params.bilinear_w, &cache.summary);
    let mut hg = vec![0.0; f_out]; // Σ_i g_i h_i over real and fake
    for i in 0..n {
        let gr = logit_grad(cache.p_global_real[i], true, w_global);
        let gf = logit_grad(cache.p_global_fake[i], false, w_global);
        let (hr, hf) = (cache.h_real.row(i), cache.h_fake.row(i));
        for p in 0..f_out {
            hg[p] += gr * hr[p] + gf * hf[p];
        }
        for (d, &v) in dh_real.row_mut(i).iter_mut().zip(&ws) {
            *d += gr * v;
        }
        for (d, &v) in dh_fake.row_mut(i).iter_mut().zip(&ws) {
            *d += gf * v;
        }
    }
    let mut dw = DenseMatrix::zeros(f_out, f_out);
    for a in 0..f_out {
        for b in 0..f_out {
            dw.set(a, b, hg[a] * cache.summary[b]);
        }
    }
    // s = σ(mean_i h_i)
    let ds = mat_t_vec(&params.bilinear_w, &hg);
    let dmean: Vec<f64> = ds
        .iter()
        .zip(&cache.summary)
        .map(|(&d, &s)| d * s * (1.0 - s) / nf)
        .collect();
    for i in 0..n {
        for (d, &v) in dh_real.row_mut(i).iter_mut().zip(&dmean) {
            *d += v;
        }
    }

    // Cluster discriminator.
    if alpha < 1.0 {
        let (Some(state), Some(z)) = (&cache.cluster, &cache.node_summaries) else {
            return Err(GicError::Config(
                "alpha < 1 needs a forward pass that ran the cluster layer".into(),
            ));
        };
        let w_cluster = (1.0 - alpha) / nf;
        let mut dz = DenseMatrix::zeros(n, f_out);
        for i in 0..n {
            let gr = logit_grad(cache.p_cluster_real[i], true, w_cluster);
            let gf = logit_grad(cache.p_cluster_fake[i], false, w_cluster);
            let zi = z.row(i);
            for (d, &v) in dh_real.row_mut(i).iter_mut().zip(zi) {
                *d += gr * v;
            }
            for (d, &v) in dh_fake.row_mut(i).iter_mut().zip(zi) {
                *d += gf * v;
            }
            let (hr, hf) = (cache.h_real.row(i), cache.h_fake.row(i));
            for (p, d) in dz.row_mut(i).iter_mut().enumerate() {
                *d = gr * hr[p] + gf * hf[p];
            }
        }
        let dh_cluster = clustering_backward(&cache.h_real, state, &dz)?;
        for (d, &v) in dh_real.as_mut_slice().iter_mut().zip(dh_cluster.as_slice()) {
            *d += v;
        }
    }

    // PReLU, then Z = Â·(XΘ) with Â symmetric.
    let (dpre_real, dslope_real) = prelu_backward(&cache.pre_real, params.prelu_slope, &dh_real);
    let (dpre_fake, dslope_fake) = prelu_backward(&cache.pre_fake, params.prelu_slope, &dh_fake);
    let mut dxw = spmm(norm_adj, &dpre_real)?;
    let dxw_fake = spmm(norm_adj, &dpre_fake)?;
    // Fake row i came from real row perm[i].
    for (i, &src) in cache.perm.iter().enumerate() {
        for (d, &v) in dxw.row_mut(src).iter_mut().zip(dxw_fake.row(i)) {
            *d += v;
        }
    }
    let dtheta = x.mul_t(&dxw)?;

    let grads = Gradients {
        theta: dtheta,
        prelu_slope: dslope_real + dslope_fake,
        bilinear_w: dw,
    };
    if !grads.is_finite() {
        return Err(GicError::NonFinite("gradient".into()));
    }
    Ok(grads)
}

/// Checkpoint envelope; the matrices live in sibling CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub num_features: usize,
    pub embed_dim: usize,
    pub alpha: f64,
    pub beta: f64,
    pub num_clusters: usize,
    pub assign_sign: AssignSign,
    pub seed: u64,
    /// Free-form description of the graph the model was trained on.
    #[serde(default)]
    pub graph: String,
    pub theta_file: String,
    pub bilinear_w_file: String,
    pub prelu_slope_file: String,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

pub fn save_checkpoint(dir: &Path, params: &ModelParams, header: &CheckpointHeader) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| GicError::io(dir, e))?;
    if header.num_features != params.num_features() || header.embed_dim != params.embed_dim() {
        return Err(GicError::Shape(format!(
            "checkpoint header says {}x{} but Θ is {}x{}",
            header.num_features,
            header.embed_dim,
            params.num_features(),
            params.embed_dim()
        )));
    }
    let path = dir.join(CHECKPOINT_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(header).expect("json"))
        .map_err(|e| GicError::io(&path, e))?;
    params.theta.write_csv(&dir.join(&header.theta_file))?;
    params.bilinear_w.write_csv(&dir.join(&header.bilinear_w_file))?;
    DenseMatrix::from_vec(1, 1, vec![params.prelu_slope])?.write_csv(&dir.join(&header.prelu_slope_file))
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams, CheckpointHeader)> {
    let path = dir.join(CHECKPOINT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| GicError::io(&path, e))?;
    let header: CheckpointHeader =
        serde_json::from_str(&text).map_err(|e| GicError::parse(&path, e.line(), e.to_string()))?;
    let theta = DenseMatrix::read_csv(&dir.join(&header.theta_file))?;
    let bilinear_w = DenseMatrix::read_csv(&dir.join(&header.bilinear_w_file))?;
    let slope = DenseMatrix::read_csv(&dir.join(&header.prelu_slope_file))?;
    if theta.shape() != (header.num_features, header.embed_dim)
        || bilinear_w.shape() != (header.embed_dim, header.embed_dim)
        || slope.shape() != (1, 1)
    {
        return Err(GicError::Shape(format!(
            "checkpoint {}: header declares {}x{} but files hold Θ {:?}, W {:?}, slope {:?}",
            dir.display(),
            header.num_features,
            header.embed_dim,
            theta.shape(),
            bilinear_w.shape(),
            slope.shape()
        )));
    }
    let params = ModelParams {
        theta,
        prelu_slope: slope.get(0, 0),
        bilinear_w,
    };
    Ok((params, header))
}
