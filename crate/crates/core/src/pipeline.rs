//! Task protocols: model selection followed by repeated train/evaluate
//! runs, for node classification, link prediction and clustering, plus the
//! hyperparameter ablation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GicError, Result};
use crate::eval::{
    auc, average_precision, classify_nodes_full, clustering_metrics, kmeans_cluster, link_scores,
    silhouette, EvalMetrics, MetricSummary,
};
use crate::graph::{
    extract_lcc, make_link_split, normalize_adjacency, sample_classification_split, AttributedGraph,
    ClassificationSplit, LinkSplit, SplitMode,
};
use crate::kernels::{row_l2_normalize, DenseMatrix};
use crate::model::{encode, ModelParams};
use crate::rng::{repeat_stream, stream, Stream};
use crate::train::{select_model, train, CandidateScore, SelectionGrid, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classify,
    Link,
    Cluster,
}

impl Task {
    /// Embedding width used for the task unless overridden.
    pub fn default_embed_dim(self) -> usize {
        match self {
            Task::Classify => 64,
            Task::Link => 16,
            Task::Cluster => 32,
        }
    }

    /// Number of protocol repeats unless overridden.
    pub fn default_repeats(self) -> usize {
        match self {
            Task::Classify => 20,
            Task::Link | Task::Cluster => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::Link => "link",
            Task::Cluster => "cluster",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = GicError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classify" | "classification" => Ok(Task::Classify),
            "link" => Ok(Task::Link),
            "cluster" | "clustering" => Ok(Task::Cluster),
            other => Err(GicError::Config(format!(
                "unknown task {other:?} (expected classify, link or cluster)"
            ))),
        }
    }
}

/// The graph a task trains on: the LCC for classification, the whole graph
/// otherwise.
pub fn task_graph(graph: &AttributedGraph, task: Task) -> Result<AttributedGraph> {
    match task {
        Task::Classify => Ok(extract_lcc(graph)?.0),
        Task::Link | Task::Cluster => Ok(graph.clone()),
    }
}

/// Row-normalized embeddings of `graph` under `params`.
pub fn embed(params: &ModelParams, graph: &AttributedGraph) -> Result<DenseMatrix> {
    if params.num_features() != graph.num_features() {
        return Err(GicError::Shape(format!(
            "model expects {} features, graph has {}",
            params.num_features(),
            graph.num_features()
        )));
    }
    let h = encode(params, &normalize_adjacency(graph), graph.features())?;
    Ok(row_l2_normalize(&h))
}

/// Protocol knobs shared by all tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub base: TrainConfig,
    /// When present, the (α, β, K) triplet is chosen on validation data.
    pub grid: Option<SelectionGrid>,
    pub repeats: usize,
    /// Split mode for classification.
    pub split_mode: SplitMode,
}

impl ProtocolConfig {
    pub fn new(task: Task, base: TrainConfig) -> Self {
        Self {
            base,
            grid: Some(SelectionGrid::default()),
            repeats: task.default_repeats(),
            split_mode: SplitMode::Imbalanced,
        }
    }
}

/// Stable result of a full protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub task: Task,
    pub num_nodes: usize,
    pub num_edges: usize,
    /// The configuration used for the repeated runs.
    pub config: TrainConfig,
    pub reduces_to_dgi: bool,
    pub selection: Option<Vec<CandidateScore>>,
    pub best_epochs: Vec<usize>,
    pub metrics: EvalMetrics,
}

fn run_seed(base_seed: u64, repeat: usize) -> u64 {
    base_seed.wrapping_add(repeat as u64 + 1)
}

fn summarize(task: Task, named: Vec<(&str, Vec<f64>)>) -> EvalMetrics {
    let metrics: BTreeMap<String, MetricSummary> = named
        .into_iter()
        .map(|(k, v)| (k.to_string(), MetricSummary::from_values(v)))
        .collect();
    EvalMetrics {
        task: task.name().to_string(),
        metrics,
    }
}

fn choose_config<F>(
    graph: &AttributedGraph,
    protocol: &ProtocolConfig,
    validate: F,
) -> Result<(TrainConfig, Option<Vec<CandidateScore>>)>
where
    F: Fn(&ModelParams) -> Result<f64> + Sync,
{
    match &protocol.grid {
        None => Ok((protocol.base, None)),
        Some(grid) => {
            let candidates = grid.candidates(&protocol.base);
            let sel = select_model(graph, &candidates, validate)?;
            Ok((sel.config, Some(sel.scores)))
        }
    }
}

/// Validation accuracy on a fixed split, used for model selection.
pub fn classification_validator<'a>(
    graph: &'a AttributedGraph,
    split: &'a ClassificationSplit,
    seed: u64,
) -> impl Fn(&ModelParams) -> Result<f64> + Sync + 'a {
    move |params| {
        let h = embed(params, graph)?;
        let labels = graph.require_labels()?;
        let r = classify_nodes_full(&h, split, labels, graph.num_classes(), &mut stream(seed, Stream::Classifier))?;
        Ok(r.val_accuracy)
    }
}

/// Node classification on the graph's LCC: select on one validation split,
/// then retrain and evaluate on `repeats` fresh splits.
pub fn classification_protocol(graph: &AttributedGraph, protocol: &ProtocolConfig) -> Result<ProtocolReport> {
    let lcc = task_graph(graph, Task::Classify)?;
    let labels = lcc.require_labels()?.to_vec();
    let seed = protocol.base.seed;
    let sel_split = sample_classification_split(&lcc, protocol.split_mode, &mut stream(seed, Stream::Split))?;
    let (config, selection) = choose_config(&lcc, protocol, classification_validator(&lcc, &sel_split, seed))?;

    let runs: Vec<Result<(f64, usize)>> = (0..protocol.repeats)
        .into_par_iter()
        .map(|r| {
            let cfg = TrainConfig {
                seed: run_seed(seed, r),
                ..config
            };
            let outcome = train(&lcc, &cfg)?;
            let h = embed(&outcome.params, &lcc)?;
            let split = sample_classification_split(&lcc, protocol.split_mode, &mut repeat_stream(seed, Stream::Split, r))?;
            let res = classify_nodes_full(&h, &split, &labels, lcc.num_classes(), &mut repeat_stream(seed, Stream::Classifier, r))?;
            Ok((res.test_accuracy, outcome.best_epoch))
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ProtocolReport {
        task: Task::Classify,
        num_nodes: lcc.num_nodes(),
        num_edges: lcc.num_edges(),
        config,
        reduces_to_dgi: config.reduces_to_dgi(),
        selection,
        best_epochs: runs.iter().map(|r| r.1).collect(),
        metrics: summarize(Task::Classify, vec![("accuracy", runs.iter().map(|r| r.0).collect())]),
    })
}

/// AUC and AP of `params` on a set of positive and negative pairs, with
/// embeddings computed on the split's training graph.
pub fn link_eval(
    params: &ModelParams,
    split: &LinkSplit,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
) -> Result<(f64, f64)> {
    let h = embed(params, split.train_graph())?;
    let ps = link_scores(&h, pos)?;
    let ns = link_scores(&h, neg)?;
    Ok((auc(&ps, &ns)?, average_precision(&ps, &ns)?))
}

/// Link prediction: select on validation AUC of one split, then run
/// `repeats` fresh splits, each with its own training run.
pub fn link_protocol(graph: &AttributedGraph, protocol: &ProtocolConfig) -> Result<ProtocolReport> {
    let seed = protocol.base.seed;
    let sel_split = make_link_split(graph, &mut stream(seed, Stream::Split))?;
    let validate = |params: &ModelParams| -> Result<f64> {
        Ok(link_eval(params, &sel_split, &sel_split.val_pos, &sel_split.val_neg)?.0)
    };
    let (config, selection) = choose_config(sel_split.train_graph(), protocol, validate)?;

    let runs: Vec<Result<(f64, f64, usize)>> = (0..protocol.repeats)
        .into_par_iter()
        .map(|r| {
            let split = make_link_split(graph, &mut repeat_stream(seed, Stream::Split, r))?;
            let cfg = TrainConfig {
                seed: run_seed(seed, r),
                ..config
            };
            let outcome = train(split.train_graph(), &cfg)?;
            let (a, p) = link_eval(&outcome.params, &split, &split.test_pos, &split.test_neg)?;
            Ok((a, p, outcome.best_epoch))
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ProtocolReport {
        task: Task::Link,
        num_nodes: graph.num_nodes(),
        num_edges: graph.num_edges(),
        config,
        reduces_to_dgi: config.reduces_to_dgi(),
        selection,
        best_epochs: runs.iter().map(|r| r.2).collect(),
        metrics: summarize(
            Task::Link,
            vec![
                ("auc", runs.iter().map(|r| r.0).collect()),
                ("ap", runs.iter().map(|r| r.1).collect()),
            ],
        ),
    })
}

/// K-means (K = number of classes) on row-normalized embeddings, scored
/// against the labels.
pub fn cluster_eval(params: &ModelParams, graph: &AttributedGraph, kmeans_seed: u64, repeat: usize) -> Result<crate::eval::ClusteringScores> {
    let labels = graph.require_labels()?;
    let h = embed(params, graph)?;
    let pred = kmeans_cluster(&h, graph.num_classes(), &mut repeat_stream(kmeans_seed, Stream::KMeans, repeat))?;
    clustering_metrics(&pred, labels)
}

/// Clustering: select on clustering accuracy, then `repeats` seeds.
pub fn clustering_protocol(graph: &AttributedGraph, protocol: &ProtocolConfig) -> Result<ProtocolReport> {
    graph.require_labels()?;
    let seed = protocol.base.seed;
    let validate = |params: &ModelParams| -> Result<f64> { Ok(cluster_eval(params, graph, seed, usize::MAX - 1)?.acc) };
    let (config, selection) = choose_config(graph, protocol, validate)?;

    let runs: Vec<Result<(crate::eval::ClusteringScores, usize)>> = (0..protocol.repeats)
        .into_par_iter()
        .map(|r| {
            let cfg = TrainConfig {
                seed: run_seed(seed, r),
                ..config
            };
            let outcome = train(graph, &cfg)?;
            Ok((cluster_eval(&outcome.params, graph, seed, r)?, outcome.best_epoch))
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ProtocolReport {
        task: Task::Cluster,
        num_nodes: graph.num_nodes(),
        num_edges: graph.num_edges(),
        config,
        reduces_to_dgi: config.reduces_to_dgi(),
        selection,
        best_epochs: runs.iter().map(|r| r.1).collect(),
        metrics: summarize(
            Task::Cluster,
            vec![
                ("acc", runs.iter().map(|r| r.0.acc).collect()),
                ("nmi", runs.iter().map(|r| r.0.nmi).collect()),
                ("ari", runs.iter().map(|r| r.0.ari).collect()),
            ],
        ),
    })
}

/// Evaluates a fixed model with the task's protocol, repeating only the
/// evaluation randomness (classification splits, K-means seeds). Link
/// prediction uses the given split.
pub fn evaluate_fixed(
    params: &ModelParams,
    graph: &AttributedGraph,
    task: Task,
    repeats: usize,
    seed: u64,
    link_split: Option<&LinkSplit>,
) -> Result<EvalMetrics> {
    match task {
        Task::Classify => {
            let labels = graph.require_labels()?;
            let h = embed(params, graph)?;
            let accs: Vec<Result<f64>> = (0..repeats)
                .into_par_iter()
                .map(|r| {
                    let split = sample_classification_split(graph, SplitMode::Imbalanced, &mut repeat_stream(seed, Stream::Split, r))?;
                    Ok(classify_nodes_full(&h, &split, labels, graph.num_classes(), &mut repeat_stream(seed, Stream::Classifier, r))?.test_accuracy)
                })
                .collect();
            Ok(summarize(task, vec![("accuracy", accs.into_iter().collect::<Result<_>>()?)]))
        }
        Task::Link => {
            let split = link_split.ok_or_else(|| GicError::Config("link evaluation needs the training split".into()))?;
            let (a, p) = link_eval(params, split, &split.test_pos, &split.test_neg)?;
            Ok(summarize(task, vec![("auc", vec![a]), ("ap", vec![p])]))
        }
        Task::Cluster => {
            let runs: Vec<Result<crate::eval::ClusteringScores>> =
                (0..repeats).into_par_iter().map(|r| cluster_eval(params, graph, seed, r)).collect();
            let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
            Ok(summarize(
                task,
                vec![
                    ("acc", runs.iter().map(|s| s.acc).collect()),
                    ("nmi", runs.iter().map(|s| s.nmi).collect()),
                    ("ari", runs.iter().map(|s| s.ari).collect()),
                ],
            ))
        }
    }
}

/// One (α, β, K) cell of the ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub alpha: f64,
    pub beta: f64,
    pub num_clusters: usize,
    /// α = 1 makes β and K irrelevant to training.
    pub cluster_params_inert: bool,
    pub silhouette: f64,
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub best_epoch: usize,
}

/// Ablation grid; a cluster count of 0 stands for "number of classes".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub clusters: Vec<usize>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            alpha: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            beta: vec![10.0, 100.0],
            clusters: vec![0, 32, 128],
        }
    }
}

impl AblationGrid {
    pub fn cells(&self, num_classes: usize) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::new();
        for &a in &self.alpha {
            for &b in &self.beta {
                for &k in &self.clusters {
                    out.push((a, b, if k == 0 { num_classes } else { k }));
                }
            }
        }
        out
    }
}

/// Trains one model per ablation cell and scores its embeddings: native-space
/// silhouette against the class labels, plus K-means clustering metrics.
/// Returns the rows and the row-normalized embeddings of each cell.
pub fn ablation(
    graph: &AttributedGraph,
    base: &TrainConfig,
    grid: &AblationGrid,
) -> Result<Vec<(AblationRow, DenseMatrix)>> {
    let labels = graph.require_labels()?;
    let cells = grid.cells(graph.num_classes());
    let rows: Vec<Result<(AblationRow, DenseMatrix)>> = cells
        .par_iter()
        .map(|&(alpha, beta, k)| {
            let cfg = TrainConfig {
                alpha,
                beta,
                num_clusters: k,
                ..*base
            };
            let outcome = train(graph, &cfg)?;
            let h = embed(&outcome.params, graph)?;
            let sil = silhouette(&h, labels)?;
            let pred = kmeans_cluster(&h, graph.num_classes(), &mut stream(base.seed, Stream::KMeans))?;
            let scores = clustering_metrics(&pred, labels)?;
            Ok((
                AblationRow {
                    alpha,
                    beta,
                    num_clusters: k,
                    cluster_params_inert: cfg.reduces_to_dgi(),
                    silhouette: sil,
                    acc: scores.acc,
                    nmi: scores.nmi,
                    ari: scores.ari,
                    best_epoch: outcome.best_epoch,
                },
                h,
            ))
        })
        .collect();
    rows.into_iter().collect()
}
