//! End-to-end tests of the `gic` binary.

mod common;

use std::path::Path;

use common::*;
use gic::graph::{save_graph, Adjacency, AttributedGraph};
use gic::kernels::DenseMatrix;
use gic::model::load_checkpoint;
use gic::pipeline::embed;
use serde_json::Value;

const FAST: &[&str] = &["--max-epochs", "30", "--patience", "10"];

fn dataset(dir: &Path) -> String {
    let g = planted_graph(150, 3, 30, 0.12, 0.01, 5);
    let path = dir.join("data");
    save_graph(&g, &path).unwrap();
    path_str(&path).to_string()
}

fn gic_ok(args: &[&str]) -> String {
    let out = run_gic(args);
    assert!(
        out.status.success(),
        "gic {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with_fast<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(FAST.iter().copied()).collect()
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_writes_checkpoint_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    let out = tmp.path().join("run");
    gic_ok(&with_fast(&["train", "--dataset", &data, "--task", "classify", "--seed", "7", "--out", path_str(&out)]));
    let r = report(&out.join("train_report.json"));
    let stable = &r["stable"];
    assert_eq!(stable["task"], "classify");
    assert_eq!(stable["reduces_to_dgi"], false);
    assert!(stable["note"].is_null());
    assert_eq!(stable["config"]["embed_dim"], 64);
    assert!(stable["loss_history"].as_array().unwrap().len() <= 30);
    assert!(r["volatile"]["wall_time_secs"].is_number());
    let (params, header) = load_checkpoint(&out.join("checkpoint")).unwrap();
    assert_eq!(params.theta.shape(), (30, 64));
    assert_eq!(header.graph, "lcc");
}

#[test]
fn alpha_one_is_tagged_as_dgi() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    let out = tmp.path().join("run");
    gic_ok(&with_fast(&["train", "--dataset", &data, "--task", "cluster", "--alpha", "1.0", "--out", path_str(&out)]));
    let stable = &report(&out.join("train_report.json"))["stable"];
    assert_eq!(stable["reduces_to_dgi"], true);
    assert_eq!(stable["note"], "reduces to DGI");
}

#[test]
fn missing_dataset_exits_2_and_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("no-such-dataset");
    let out = run_gic(&["train", "--dataset", path_str(&missing), "--task", "classify", "--out", path_str(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-dataset"));
}

#[test]
fn invalid_configuration_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    let out = path_str(tmp.path());
    let bad_alpha = run_gic(&["train", "--dataset", &data, "--task", "classify", "--alpha", "2", "--out", out]);
    assert_eq!(bad_alpha.status.code(), Some(1));
    let bad_task = run_gic(&["train", "--dataset", &data, "--task", "regress", "--out", out]);
    assert_eq!(bad_task.status.code(), Some(1));
    let bad_flag = run_gic(&["train", "--frobnicate"]);
    assert_eq!(bad_flag.status.code(), Some(1));
    let bad_sign = run_gic(&["train", "--dataset", &data, "--task", "link", "--assign-sign", "sideways", "--out", out]);
    assert_eq!(bad_sign.status.code(), Some(1));
    assert_eq!(run_gic(&["--help"]).status.code(), Some(0));
}

#[test]
fn overflowing_features_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let adj = Adjacency::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
    let x = DenseMatrix::filled(3, 2, 1e308);
    let g = AttributedGraph::new(adj, x, None, 0).unwrap();
    let data = tmp.path().join("huge");
    save_graph(&g, &data).unwrap();
    let out = run_gic(&["train", "--dataset", path_str(&data), "--task", "cluster", "--clusters", "2", "--dim", "4", "--out", path_str(tmp.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    let cfg = tmp.path().join("run.json");
    std::fs::write(
        &cfg,
        format!(r#"{{"dataset": {data:?}, "task": "cluster", "alpha": 0.25, "beta": 10.0, "max_epochs": 5}}"#),
    )
    .unwrap();
    let out = tmp.path().join("run");
    gic_ok(&["train", "--config", path_str(&cfg), "--alpha", "0.75", "--out", path_str(&out)]);
    let c = &report(&out.join("train_report.json"))["stable"]["config"];
    assert_eq!(c["alpha"], 0.75);
    assert_eq!(c["beta"], 10.0);
    assert_eq!(c["max_epochs"], 5);
    assert_eq!(c["patience"], 50);
    assert_eq!(c["embed_dim"], 32);
}

#[test]
fn eval_classification_reports_twenty_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    let run = tmp.path().join("run");
    gic_ok(&with_fast(&["train", "--dataset", &data, "--task", "classify", "--out", path_str(&run)]));
    let ckpt = run.join("checkpoint");
    let ev = tmp.path().join("eval");
    gic_ok(&["eval", "--dataset", &data, "--task", "classify", "--checkpoint", path_str(&ckpt), "--out", path_str(&ev)]);
    let acc = &report(&ev.join("eval_report.json"))["stable"]["metrics"]["metrics"]["accuracy"];
    assert_eq!(acc["values"].as_array().unwrap().len(), 20);
    assert!(acc["mean"].is_number() && acc["std"].is_number());
}

#[test]
fn eval_link_reports_auc_and_ap() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    let run = tmp.path().join("run");
    gic_ok(&with_fast(&["train", "--dataset", &data, "--task", "link", "--out", path_str(&run)]));
    assert!(run.join("checkpoint").join("link_split.json").exists());
    let ev = tmp.path().join("eval");
    gic_ok(&["eval", "--dataset", &data, "--task", "link", "--checkpoint", path_str(&run.join("checkpoint")), "--out", path_str(&ev)]);
    let m = &report(&ev.join("eval_report.json"))["stable"]["metrics"]["metrics"];
    assert!(m["auc"]["mean"].as_f64().unwrap() > 0.5);
    assert!(m["ap"]["mean"].is_number());
}

#[test]
fn eval_without_checkpoint_runs_the_protocol() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    let ev = tmp.path().join("eval");
    gic_ok(&with_fast(&["eval", "--dataset", &data, "--task", "cluster", "--repeats", "2", "--out", path_str(&ev)]));
    let stable = &report(&ev.join("eval_report.json"))["stable"];
    assert_eq!(stable["protocol"]["best_epochs"].as_array().unwrap().len(), 2);
    for key in ["acc", "nmi", "ari"] {
        assert_eq!(stable["metrics"]["metrics"][key]["values"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn eval_with_wrong_width_exits_1_and_prints_both_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    let run = tmp.path().join("run");
    gic_ok(&with_fast(&["train", "--dataset", &data, "--task", "cluster", "--dim", "8", "--out", path_str(&run)]));
    let out = run_gic(&["eval", "--dataset", &data, "--task", "cluster", "--dim", "16", "--checkpoint", path_str(&run.join("checkpoint")), "--out", path_str(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("30x8") && err.contains("30x16"), "{err}");
}

#[test]
fn ablate_two_cell_grid_writes_two_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    let out = tmp.path().join("ablate");
    let grid = r#"{"alpha": [0.5, 1.0], "beta": [10.0], "clusters": [4]}"#;
    gic_ok(&with_fast(&["ablate", "--dataset", &data, "--grid", grid, "--dim", "8", "--out", path_str(&out)]));
    let rows = report(&out.join("ablation.json"))["stable"]["rows"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["cluster_params_inert"], false);
    assert_eq!(rows[1]["cluster_params_inert"], true);
    let table = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    let emb = DenseMatrix::read_csv(&out.join("embeddings").join("cell_01.csv")).unwrap();
    assert_eq!(emb.shape(), (150, 8));
}

#[test]
fn export_round_trips_embeddings_and_writes_centroids() {
    let tmp = tempfile::tempdir().unwrap();
    let adj = Adjacency::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
    let x = DenseMatrix::from_rows(&[[1.0, 0.0, 2.0], [0.0, 1.0, 0.5], [1.0, 1.0, 0.0]]).unwrap();
    let g = AttributedGraph::new(adj, x, None, 0).unwrap();
    let data = tmp.path().join("toy");
    save_graph(&g, &data).unwrap();
    let run = tmp.path().join("run");
    gic_ok(&["train", "--dataset", path_str(&data), "--task", "cluster", "--clusters", "2", "--dim", "4", "--max-epochs", "5", "--out", path_str(&run)]);
    let ckpt = run.join("checkpoint");
    let out = tmp.path().join("export");
    gic_ok(&["export", "--dataset", path_str(&data), "--checkpoint", path_str(&ckpt), "--clusters", "--out", path_str(&out)]);

    let text = std::fs::read_to_string(out.join("embeddings.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.split(',').count() == 4));
    let (params, _) = load_checkpoint(&ckpt).unwrap();
    assert_eq!(DenseMatrix::read_csv(&out.join("embeddings.csv")).unwrap(), embed(&params, &g).unwrap());
    assert_eq!(DenseMatrix::read_csv(&out.join("centroids.csv")).unwrap().shape(), (2, 4));
    assert_eq!(DenseMatrix::read_csv(&out.join("summary.csv")).unwrap().shape(), (1, 4));

    let plain = tmp.path().join("plain");
    gic_ok(&["export", "--dataset", path_str(&data), "--checkpoint", path_str(&ckpt), "--out", path_str(&plain)]);
    assert!(!plain.join("centroids.csv").exists());
}
