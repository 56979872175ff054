//! Adam optimization of the GIC objective, early stopping and grid-based
//! model selection.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::AssignSign;
use crate::error::{GicError, Result};
use crate::graph::{normalize_adjacency, random_permutation, AttributedGraph};
use crate::model::{backward, forward, loss_total, ClusterSeed, Gradients, ModelParams, ObjectiveConfig};
use crate::rng::{stream, GicRng, Stream};

pub const DEFAULT_LEARNING_RATE: f64 = 0.001;
pub const DEFAULT_MAX_EPOCHS: usize = 2000;
pub const DEFAULT_PATIENCE: usize = 50;

/// One training run's full recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub num_clusters: usize,
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub assign_sign: AssignSign,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 100.0,
            num_clusters: 32,
            embed_dim: 64,
            learning_rate: DEFAULT_LEARNING_RATE,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            seed: 0,
            assign_sign: AssignSign::Plus,
        }
    }
}

impl TrainConfig {
    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            alpha: self.alpha,
            beta: self.beta,
            num_clusters: self.num_clusters,
            assign_sign: self.assign_sign,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective().validate()?;
        if self.embed_dim == 0 {
            return Err(GicError::Config("embedding dimension must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(GicError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(GicError::Config("max_epochs and patience must be positive".into()));
        }
        Ok(())
    }

    /// True when the run reduces to plain Deep Graph Infomax.
    pub fn reduces_to_dgi(&self) -> bool {
        self.alpha == 1.0
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment buffers for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m_theta: Vec<f64>,
    v_theta: Vec<f64>,
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_slope: f64,
    v_slope: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let t = params.theta.as_slice().len();
        let w = params.bilinear_w.as_slice().len();
        Self {
            step: 0,
            m_theta: vec![0.0; t],
            v_theta: vec![0.0; t],
            m_w: vec![0.0; w],
            v_w: vec![0.0; w],
            m_slope: 0.0,
            v_slope: 0.0,
        }
    }
}

/// One bias-corrected Adam update of a flat parameter buffer at step `t`
/// (1-based).
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, t: u64) {
    let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.theta.shape() != params.theta.shape() || grads.bilinear_w.shape() != params.bilinear_w.shape() {
        return Err(GicError::Shape(format!(
            "gradients {:?}/{:?} do not match parameters {:?}/{:?}",
            grads.theta.shape(),
            grads.bilinear_w.shape(),
            params.theta.shape(),
            params.bilinear_w.shape()
        )));
    }
    if !grads.is_finite() {
        return Err(GicError::NonFinite(format!(
            "gradient at optimizer step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step;
    adam_update(
        params.theta.as_mut_slice(),
        grads.theta.as_slice(),
        &mut state.m_theta,
        &mut state.v_theta,
        lr,
        t,
    );
    adam_update(
        params.bilinear_w.as_mut_slice(),
        grads.bilinear_w.as_slice(),
        &mut state.m_w,
        &mut state.v_w,
        lr,
        t,
    );
    adam_update(
        std::slice::from_mut(&mut params.prelu_slope),
        &[grads.prelu_slope],
        std::slice::from_mut(&mut state.m_slope),
        std::slice::from_mut(&mut state.v_slope),
        lr,
        t,
    );
    Ok(())
}

/// Patience-based early stopping on a loss to be minimized.
///
/// An epoch counts as an improvement only if its loss is strictly lower
/// than the best seen so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: Option<usize>,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Verdict {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
            return Verdict::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest training loss.
    pub params: ModelParams,
    pub loss_history: Vec<f64>,
    pub best_epoch: usize,
    pub wall_time_secs: f64,
}

/// Trains a GIC model on `graph` with full-graph epochs.
///
/// Each epoch draws a fresh corruption permutation and, when α < 1, fresh
/// initial centroids; the loss reported for an epoch is the one computed
/// before that epoch's parameter update, and the snapshot kept for the best
/// epoch is the parameter state that produced it.
pub fn train(graph: &AttributedGraph, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let started = Instant::now();
    let norm_adj = normalize_adjacency(graph);
    let x = crate::kernels::SparseFeatures::from_dense(graph.features());
    let x = &x;
    let n = graph.num_nodes();
    if n == 0 {
        return Err(GicError::Data("cannot train on an empty graph".into()));
    }
    if config.objective().uses_clusters() && config.num_clusters > n {
        return Err(GicError::Config(format!(
            "{} clusters requested for {n} nodes",
            config.num_clusters
        )));
    }
    let objective = config.objective();

    let mut params = ModelParams::init(graph.num_features(), config.embed_dim, &mut stream(config.seed, Stream::ParamInit));
    let mut corruption_rng = stream(config.seed, Stream::Corruption);
    let mut cluster_rng = stream(config.seed, Stream::ClusterInit);
    let mut adam = AdamState::new(&params);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = params.clone();
    let mut history = Vec::new();

    for epoch in 0..config.max_epochs {
        let perm = random_permutation(n, &mut corruption_rng);
        let seed: ClusterSeed<'_, GicRng> = ClusterSeed::Sample(&mut cluster_rng);
        let cache = forward(&params, &norm_adj, x, &perm, &objective, seed)?;
        let loss = loss_total(&cache, config.alpha).map_err(|e| match e {
            GicError::NonFinite(m) => GicError::NonFinite(format!("epoch {epoch}: {m}")),
            other => other,
        })?;
        history.push(loss);
        match stopper.observe(epoch, loss) {
            Verdict::Improved => best.clone_from(&params),
            Verdict::Continue => {}
            Verdict::Stop => break,
        }
        let grads = backward(&params, &norm_adj, x, &cache, config.alpha)?;
        adam_step(&mut params, &grads, &mut adam, config.learning_rate)
            .map_err(|e| GicError::NonFinite(format!("epoch {epoch}: {e}")))?;
    }

    Ok(TrainOutcome {
        params: best,
        loss_history: history,
        best_epoch: stopper.best_epoch().unwrap_or(0),
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// The (α, β, K) grid searched during model selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionGrid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub clusters: Vec<usize>,
}

impl Default for SelectionGrid {
    fn default() -> Self {
        Self {
            alpha: vec![0.25, 0.5, 0.75],
            beta: vec![10.0, 100.0],
            clusters: vec![32, 128],
        }
    }
}

impl SelectionGrid {
    /// Configurations in grid order (α outermost, then β, then K).
    pub fn candidates(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &alpha in &self.alpha {
            for &beta in &self.beta {
                for &k in &self.clusters {
                    out.push(TrainConfig {
                        alpha,
                        beta,
                        num_clusters: k,
                        ..*base
                    });
                }
            }
        }
        out
    }
}

/// Validation score of one grid candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub alpha: f64,
    pub beta: f64,
    pub num_clusters: usize,
    pub score: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub config: TrainConfig,
    pub outcome: TrainOutcome,
    pub scores: Vec<CandidateScore>,
}

/// Trains every candidate, scores it with `validate` (higher is better) and
/// keeps the best; ties go to the earliest candidate.
pub fn select_model<F>(graph: &AttributedGraph, candidates: &[TrainConfig], validate: F) -> Result<Selection>
where
    F: Fn(&ModelParams) -> Result<f64> + Sync,
{
    if candidates.is_empty() {
        return Err(GicError::Config("model selection needs at least one candidate".into()));
    }
    let runs: Vec<Result<(TrainOutcome, f64)>> = candidates
        .par_iter()
        .map(|cfg| {
            let outcome = train(graph, cfg)?;
            let score = validate(&outcome.params)?;
            Ok((outcome, score))
        })
        .collect();
    let mut scores = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, TrainOutcome, f64)> = None;
    for (i, run) in runs.into_iter().enumerate() {
        let (outcome, score) = run?;
        let cfg = &candidates[i];
        scores.push(CandidateScore {
            alpha: cfg.alpha,
            beta: cfg.beta,
            num_clusters: cfg.num_clusters,
            score,
            best_epoch: outcome.best_epoch,
        });
        if best.as_ref().is_none_or(|(_, _, s)| score > *s) {
            best = Some((i, outcome, score));
        }
    }
    let (i, outcome, _) = best.expect("at least one candidate");
    Ok(Selection {
        config: candidates[i],
        outcome,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::DenseMatrix;

    fn scalar_params(v: f64) -> ModelParams {
        ModelParams {
            theta: DenseMatrix::from_vec(1, 1, vec![v]).unwrap(),
            prelu_slope: 0.25,
            bilinear_w: DenseMatrix::from_vec(1, 1, vec![0.0]).unwrap(),
        }
    }

    fn scalar_grad(g: f64) -> Gradients {
        Gradients {
            theta: DenseMatrix::from_vec(1, 1, vec![g]).unwrap(),
            prelu_slope: 0.0,
            bilinear_w: DenseMatrix::from_vec(1, 1, vec![0.0]).unwrap(),
        }
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        for g in [3.0, -0.02] {
            let mut p = scalar_params(1.0);
            let mut s = AdamState::new(&p);
            adam_step(&mut p, &scalar_grad(g), &mut s, 0.001).unwrap();
            let moved = p.theta.get(0, 0) - 1.0;
            assert!((moved + 0.001 * g.signum()).abs() < 1e-9, "{moved}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_params(1.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &scalar_grad(0.0), &mut s, 0.001).unwrap();
        assert_eq!(p, scalar_params(1.0));
        assert_eq!(s.step, 1);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = scalar_params(1.0);
        let mut s = AdamState::new(&p);
        let err = adam_step(&mut p, &scalar_grad(f64::NAN), &mut s, 0.001);
        assert!(matches!(err, Err(GicError::NonFinite(_))));
        assert_eq!(s.step, 0);
    }

    #[test]
    fn adam_on_quadratic_matches_scalar_oracle() {
        // Hand-rolled scalar Adam on f(w) = w², f'(w) = 2w.
        let lr = 0.1;
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut oracle = Vec::new();
        for t in 1..=10 {
            let g = 2.0 * w;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= lr * mh / (vh.sqrt() + 1e-8);
            oracle.push(w);
        }
        let mut p = scalar_params(1.0);
        let mut s = AdamState::new(&p);
        let mut prev = 1.0f64;
        for want in oracle {
            let g = 2.0 * p.theta.get(0, 0);
            adam_step(&mut p, &scalar_grad(g), &mut s, lr).unwrap();
            let w = p.theta.get(0, 0);
            assert!((w - want).abs() <= 1e-14 * want.abs().max(1.0), "{w} vs {want}");
            assert!(w.abs() < prev.abs());
            prev = w;
        }
    }

    #[test]
    fn early_stopping_halts_after_patience() {
        // Improves through epoch 30, then plateaus.
        let loss = |e: usize| if e <= 30 { 100.0 - e as f64 } else { 70.0 };
        let mut stopper = EarlyStopping::new(50);
        let mut history = Vec::new();
        for epoch in 0..2000 {
            history.push(loss(epoch));
            if stopper.observe(epoch, loss(epoch)) == Verdict::Stop {
                break;
            }
        }
        assert_eq!(history.len(), 81);
        assert_eq!(stopper.best_epoch(), Some(30));
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        let mut s = EarlyStopping::new(2);
        assert_eq!(s.observe(0, 1.0), Verdict::Improved);
        assert_eq!(s.observe(1, 1.0), Verdict::Continue);
        assert_eq!(s.observe(2, 1.0), Verdict::Stop);
        assert_eq!(s.best_epoch(), Some(0));
    }

    #[test]
    fn default_grid_has_twelve_candidates_in_order() {
        let c = SelectionGrid::default().candidates(&TrainConfig::default());
        assert_eq!(c.len(), 12);
        assert_eq!((c[0].alpha, c[0].beta, c[0].num_clusters), (0.25, 10.0, 32));
        assert_eq!((c[1].alpha, c[1].beta, c[1].num_clusters), (0.25, 10.0, 128));
        assert_eq!((c[11].alpha, c[11].beta, c[11].num_clusters), (0.75, 100.0, 128));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { alpha: 1.2, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { beta: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { embed_dim: 0, ..Default::default() }.validate().is_err());
    }
}
