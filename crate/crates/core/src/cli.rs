//! The `gic` command line: `train`, `eval`, `ablate` and `export`.
//!
//! Settings resolve as command-line flag, then `--config` JSON, then the
//! built-in defaults.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cluster::{run_clustering, AssignSign};
use crate::error::{GicError, Result};
use crate::eval::EvalMetrics;
use crate::graph::{load_graph, make_link_split, sample_classification_split, AttributedGraph, LinkSplit, SplitMode};
use crate::kernels::DenseMatrix;
use crate::model::{encode, global_summary, load_checkpoint, save_checkpoint, CheckpointHeader, ModelParams};
use crate::pipeline::{
    ablation, classification_protocol, classification_validator, cluster_eval, clustering_protocol, embed,
    evaluate_fixed, link_eval, link_protocol, task_graph, AblationGrid, AblationRow, ProtocolConfig, ProtocolReport,
    Task,
};
use crate::report::{read_json, write_json, Report, Volatile};
use crate::rng::{stream, Stream};
use crate::train::{select_model, train, CandidateScore, SelectionGrid, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "gic", version, about = "Graph InfoClust node embeddings and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model (optionally selecting α, β, K on validation data).
    Train(TrainArgs),
    /// Evaluate a checkpoint, or run the full repeated protocol.
    Eval(EvalArgs),
    /// Train one model per (α, β, K) cell and report silhouette and clustering scores.
    Ablate(AblateArgs),
    /// Write row-normalized embeddings (and optionally cluster centroids).
    Export(ExportArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Dataset directory (meta.json, edges.csv, features.csv, labels.csv).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// classify | link | cluster
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Number of clusters K of the cluster layer.
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Embedding width F′.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// plus | minus
    #[arg(long)]
    pub assign_sign: Option<String>,
    /// Selection grid: "default", a JSON file, or inline JSON.
    #[arg(long)]
    pub grid: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint directory written by `train`. Without it the full
    /// protocol (retraining per repeat) is run.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Expected embedding width F′ (checked against the checkpoint).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write cluster centroids; K defaults to the checkpoint's value.
    #[arg(long, num_args = 0..=1, value_name = "K")]
    pub clusters: Option<Option<usize>>,
}

impl ExportArgs {
    fn common(&self) -> CommonArgs {
        CommonArgs {
            dataset: self.dataset.clone(),
            dim: self.dim,
            seed: self.seed,
            out: self.out.clone(),
            config: self.config.clone(),
            ..CommonArgs::default()
        }
    }
}

/// Settings accepted in a `--config` file; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: Option<PathBuf>,
    pub task: Option<String>,
    pub out: Option<PathBuf>,
    pub repeats: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub clusters: Option<usize>,
    pub dim: Option<usize>,
    pub seed: Option<u64>,
    pub learning_rate: Option<f64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub assign_sign: Option<AssignSign>,
    pub grid: Option<serde_json::Value>,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub task: Task,
    pub train: TrainConfig,
    pub out: PathBuf,
    pub repeats: usize,
    pub grid: Option<serde_json::Value>,
    /// Whether `--dim` (or the config file) fixed F′ explicitly.
    pub dim_given: bool,
}

fn parse_grid_value(text: &str) -> Result<serde_json::Value> {
    if text == "default" {
        return Ok(serde_json::Value::String("default".into()));
    }
    let body = if text.trim_start().starts_with('{') {
        text.to_string()
    } else {
        std::fs::read_to_string(text).map_err(|e| GicError::Config(format!("cannot read grid file {text}: {e}")))?
    };
    serde_json::from_str(&body).map_err(|e| GicError::Config(format!("grid is not valid JSON: {e}")))
}

impl RunConfig {
    /// Merges flags over the config file over defaults.
    pub fn resolve(args: &CommonArgs, default_task: Option<Task>) -> Result<Self> {
        let file: RunConfigFile = match &args.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| GicError::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| GicError::Config(format!("config {}: {e}", p.display())))?
            }
            None => RunConfigFile::default(),
        };
        let dataset = args
            .dataset
            .clone()
            .or(file.dataset)
            .ok_or_else(|| GicError::Config("--dataset is required".into()))?;
        let task = match args.task.as_deref().or(file.task.as_deref()) {
            Some(t) => t.parse()?,
            None => default_task.ok_or_else(|| GicError::Config("--task is required".into()))?,
        };
        let out = args
            .out
            .clone()
            .or(file.out)
            .ok_or_else(|| GicError::Config("--out is required".into()))?;
        let assign_sign = match &args.assign_sign {
            Some(s) => s.parse()?,
            None => file.assign_sign.unwrap_or_default(),
        };
        let defaults = TrainConfig::default();
        let dim = args.dim.or(file.dim);
        let train = TrainConfig {
            alpha: args.alpha.or(file.alpha).unwrap_or(defaults.alpha),
            beta: args.beta.or(file.beta).unwrap_or(defaults.beta),
            num_clusters: args.clusters.or(file.clusters).unwrap_or(defaults.num_clusters),
            embed_dim: dim.unwrap_or(task.default_embed_dim()),
            learning_rate: args.learning_rate.or(file.learning_rate).unwrap_or(defaults.learning_rate),
            max_epochs: args.max_epochs.or(file.max_epochs).unwrap_or(defaults.max_epochs),
            patience: args.patience.or(file.patience).unwrap_or(defaults.patience),
            seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
            assign_sign,
        };
        train.validate()?;
        let repeats = args.repeats.or(file.repeats).unwrap_or(task.default_repeats());
        if repeats == 0 {
            return Err(GicError::Config("--repeats must be at least 1".into()));
        }
        let grid = match &args.grid {
            Some(g) => Some(parse_grid_value(g)?),
            None => file.grid,
        };
        Ok(Self {
            dataset,
            task,
            train,
            out,
            repeats,
            grid,
            dim_given: dim.is_some(),
        })
    }

    pub fn selection_grid(&self) -> Result<Option<SelectionGrid>> {
        match &self.grid {
            None => Ok(None),
            Some(serde_json::Value::String(s)) if s == "default" => Ok(Some(SelectionGrid::default())),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| GicError::Config(format!("selection grid: {e}"))),
        }
    }

    pub fn ablation_grid(&self) -> Result<AblationGrid> {
        match &self.grid {
            None => Ok(AblationGrid::default()),
            Some(serde_json::Value::String(s)) if s == "default" => Ok(AblationGrid::default()),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| GicError::Config(format!("ablation grid: {e}"))),
        }
    }
}

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LINK_SPLIT_FILE: &str = "link_split.json";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const ABLATION_REPORT: &str = "ablation.json";
pub const ABLATION_TABLE: &str = "ablation.csv";

/// Stable part of the training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub dataset: String,
    pub task: Task,
    pub graph: String,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub config: TrainConfig,
    pub reduces_to_dgi: bool,
    /// Present when α = 1.
    pub note: Option<String>,
    pub selection: Option<Vec<CandidateScore>>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub loss_history: Vec<f64>,
}

/// Graph used for training for `task`, plus the link split when relevant.
fn training_graph(graph: &AttributedGraph, task: Task, seed: u64) -> Result<(AttributedGraph, Option<LinkSplit>, &'static str)> {
    match task {
        Task::Classify => Ok((task_graph(graph, task)?, None, "lcc")),
        Task::Cluster => Ok((graph.clone(), None, "full")),
        Task::Link => {
            let split = make_link_split(graph, &mut stream(seed, Stream::Split))?;
            Ok((split.train_graph().clone(), Some(split), "link-train"))
        }
    }
}

fn header_for(params: &ModelParams, cfg: &TrainConfig, graph: &str) -> CheckpointHeader {
    CheckpointHeader {
        num_features: params.num_features(),
        embed_dim: params.embed_dim(),
        alpha: cfg.alpha,
        beta: cfg.beta,
        num_clusters: cfg.num_clusters,
        assign_sign: cfg.assign_sign,
        seed: cfg.seed,
        graph: graph.to_string(),
        theta_file: "theta.csv".into(),
        bilinear_w_file: "bilinear_w.csv".into(),
        prelu_slope_file: "prelu_slope.csv".into(),
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    let started = Instant::now();
    let graph = load_graph(&cfg.dataset)?;
    let seed = cfg.train.seed;
    let (train_graph, link_split, graph_kind) = training_graph(&graph, cfg.task, seed)?;

    let (config, outcome, selection) = match cfg.selection_grid()? {
        None => (cfg.train, train(&train_graph, &cfg.train)?, None),
        Some(grid) => {
            let candidates = grid.candidates(&cfg.train);
            let sel = match cfg.task {
                Task::Classify => {
                    let split = sample_classification_split(&train_graph, SplitMode::Imbalanced, &mut stream(seed, Stream::Split))?;
                    select_model(&train_graph, &candidates, classification_validator(&train_graph, &split, seed))?
                }
                Task::Link => {
                    let split = link_split.as_ref().expect("link split");
                    select_model(&train_graph, &candidates, |p| Ok(link_eval(p, split, &split.val_pos, &split.val_neg)?.0))?
                }
                Task::Cluster => {
                    select_model(&train_graph, &candidates, |p| Ok(cluster_eval(p, &train_graph, seed, usize::MAX - 1)?.acc))?
                }
            };
            (sel.config, sel.outcome, Some(sel.scores))
        }
    };

    let ckpt_dir = cfg.out.join(CHECKPOINT_DIR);
    save_checkpoint(&ckpt_dir, &outcome.params, &header_for(&outcome.params, &config, graph_kind))?;
    if let Some(split) = &link_split {
        write_json(&ckpt_dir.join(LINK_SPLIT_FILE), split)?;
    }
    let report = TrainReport {
        dataset: cfg.dataset.display().to_string(),
        task: cfg.task,
        graph: graph_kind.to_string(),
        num_nodes: train_graph.num_nodes(),
        num_edges: train_graph.num_edges(),
        config,
        reduces_to_dgi: config.reduces_to_dgi(),
        note: config.reduces_to_dgi().then(|| "reduces to DGI".to_string()),
        selection,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.loss_history.len(),
        loss_history: outcome.loss_history,
    };
    write_json(
        &cfg.out.join(TRAIN_REPORT),
        &Report {
            stable: &report,
            volatile: Volatile::now(started.elapsed().as_secs_f64()),
        },
    )?;
    Ok(report)
}

/// Stable part of the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub task: Task,
    pub repeats: usize,
    pub checkpoint: Option<CheckpointHeader>,
    pub protocol: Option<ProtocolReport>,
    pub metrics: EvalMetrics,
}

fn check_checkpoint_shapes(header: &CheckpointHeader, graph: &AttributedGraph, cfg: &RunConfig) -> Result<()> {
    if header.num_features != graph.num_features() {
        return Err(GicError::Shape(format!(
            "checkpoint Θ is {}x{} but the dataset has {} features",
            header.num_features,
            header.embed_dim,
            graph.num_features()
        )));
    }
    if cfg.dim_given && cfg.train.embed_dim != header.embed_dim {
        return Err(GicError::Shape(format!(
            "checkpoint Θ is {}x{} but the requested embedding is {}x{}",
            header.num_features, header.embed_dim, header.num_features, cfg.train.embed_dim
        )));
    }
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalReport> {
    let started = Instant::now();
    let graph = load_graph(&cfg.dataset)?;
    let report = match checkpoint {
        Some(dir) => {
            let (params, header) = load_checkpoint(dir)?;
            check_checkpoint_shapes(&header, &graph, cfg)?;
            let (metrics, repeats) = match cfg.task {
                Task::Link => {
                    let split_path = dir.join(LINK_SPLIT_FILE);
                    let mut split: LinkSplit = read_json(&split_path)?;
                    split.attach(&graph)?;
                    (evaluate_fixed(&params, &graph, Task::Link, 1, cfg.train.seed, Some(&split))?, 1)
                }
                task => {
                    let g = task_graph(&graph, task)?;
                    (evaluate_fixed(&params, &g, task, cfg.repeats, cfg.train.seed, None)?, cfg.repeats)
                }
            };
            EvalReport {
                dataset: cfg.dataset.display().to_string(),
                task: cfg.task,
                repeats,
                checkpoint: Some(header),
                protocol: None,
                metrics,
            }
        }
        None => {
            let protocol = ProtocolConfig {
                base: cfg.train,
                grid: cfg.selection_grid()?,
                repeats: cfg.repeats,
                split_mode: SplitMode::Imbalanced,
            };
            let result = match cfg.task {
                Task::Classify => classification_protocol(&graph, &protocol)?,
                Task::Link => link_protocol(&graph, &protocol)?,
                Task::Cluster => clustering_protocol(&graph, &protocol)?,
            };
            EvalReport {
                dataset: cfg.dataset.display().to_string(),
                task: cfg.task,
                repeats: cfg.repeats,
                checkpoint: None,
                metrics: result.metrics.clone(),
                protocol: Some(result),
            }
        }
    };
    write_json(
        &cfg.out.join(EVAL_REPORT),
        &Report {
            stable: &report,
            volatile: Volatile::now(started.elapsed().as_secs_f64()),
        },
    )?;
    Ok(report)
}

/// Stable part of the ablation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub dataset: String,
    pub base: TrainConfig,
    pub rows: Vec<AblationRow>,
    /// Mean silhouette per α, reported for trend inspection.
    pub silhouette_by_alpha: Vec<(f64, f64)>,
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationReport> {
    let started = Instant::now();
    let graph = load_graph(&cfg.dataset)?;
    graph.require_labels()?;
    let grid = cfg.ablation_grid()?;
    let results = ablation(&graph, &cfg.train, &grid)?;

    let emb_dir = cfg.out.join("embeddings");
    std::fs::create_dir_all(&emb_dir).map_err(|e| GicError::io(&emb_dir, e))?;
    let mut table = String::from("alpha,beta,clusters,cluster_params_inert,silhouette,acc,nmi,ari,best_epoch,embeddings\n");
    for (i, (row, h)) in results.iter().enumerate() {
        let name = format!("cell_{i:02}.csv");
        h.write_csv(&emb_dir.join(&name))?;
        table.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},embeddings/{}\n",
            row.alpha, row.beta, row.num_clusters, row.cluster_params_inert, row.silhouette, row.acc, row.nmi, row.ari, row.best_epoch, name
        ));
    }
    let table_path = cfg.out.join(ABLATION_TABLE);
    std::fs::write(&table_path, table).map_err(|e| GicError::io(&table_path, e))?;

    let rows: Vec<AblationRow> = results.into_iter().map(|(r, _)| r).collect();
    let mut alphas: Vec<f64> = rows.iter().map(|r| r.alpha).collect();
    alphas.dedup();
    let silhouette_by_alpha = alphas
        .iter()
        .map(|&a| {
            let v: Vec<f64> = rows.iter().filter(|r| r.alpha == a).map(|r| r.silhouette).collect();
            (a, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    let report = AblationReport {
        dataset: cfg.dataset.display().to_string(),
        base: cfg.train,
        rows,
        silhouette_by_alpha,
    };
    write_json(
        &cfg.out.join(ABLATION_REPORT),
        &Report {
            stable: &report,
            volatile: Volatile::now(started.elapsed().as_secs_f64()),
        },
    )?;
    Ok(report)
}

/// Files written by `export`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportedFiles {
    pub embeddings: PathBuf,
    pub summary: PathBuf,
    pub centroids: Option<PathBuf>,
}

/// Writes embeddings and the graph summary; with `clusters = Some(k)` also
/// the cluster layer's centroids (`k = None` uses the checkpoint's K).
pub fn cmd_export(cfg: &RunConfig, checkpoint: &Path, clusters: Option<Option<usize>>) -> Result<ExportedFiles> {
    let graph = load_graph(&cfg.dataset)?;
    let (params, header) = load_checkpoint(checkpoint)?;
    check_checkpoint_shapes(&header, &graph, cfg)?;
    let graph = if header.graph == "lcc" { task_graph(&graph, Task::Classify)? } else { graph };
    std::fs::create_dir_all(&cfg.out).map_err(|e| GicError::io(&cfg.out, e))?;

    let embeddings = cfg.out.join("embeddings.csv");
    embed(&params, &graph)?.write_csv(&embeddings)?;

    let raw = encode(&params, &crate::graph::normalize_adjacency(&graph), graph.features())?;
    let summary = cfg.out.join("summary.csv");
    DenseMatrix::from_vec(1, raw.cols(), global_summary(&raw))?.write_csv(&summary)?;

    let centroids = if let Some(k) = clusters {
        let state = run_clustering(
            &raw,
            k.unwrap_or(header.num_clusters),
            header.beta,
            header.assign_sign,
            &mut stream(header.seed, Stream::ClusterInit),
        )?;
        let path = cfg.out.join("centroids.csv");
        state.centroids.write_csv(&path)?;
        Some(path)
    } else {
        None
    };
    Ok(ExportedFiles {
        embeddings,
        summary,
        centroids,
    })
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.class().exit_code()
        }
    }
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Train(a) => {
            let cfg = RunConfig::resolve(&a.common, None)?;
            let r = cmd_train(&cfg)?;
            println!(
                "trained {} epochs (best {}), loss {:.6}; wrote {}",
                r.epochs_run,
                r.best_epoch,
                r.loss_history[r.best_epoch],
                cfg.out.display()
            );
        }
        Command::Eval(a) => {
            let cfg = RunConfig::resolve(&a.common, None)?;
            let r = cmd_eval(&cfg, a.checkpoint.as_deref())?;
            for (name, m) in &r.metrics.metrics {
                println!("{name}: {:.4} ± {:.4} over {} runs", m.mean, m.std, m.values.len());
            }
        }
        Command::Ablate(a) => {
            let cfg = RunConfig::resolve(&a.common, Some(Task::Cluster))?;
            let r = cmd_ablate(&cfg)?;
            println!("wrote {} ablation rows to {}", r.rows.len(), cfg.out.display());
        }
        Command::Export(a) => {
            let cfg = RunConfig::resolve(&a.common(), Some(Task::Cluster))?;
            let files = cmd_export(&cfg, &a.checkpoint, a.clusters)?;
            println!("wrote {}", files.embeddings.display());
        }
    }
    Ok(())
}
