//! Command-level behavior: deterministic outputs, file round-trips, flag
//! validation, and report consistency.

use clap::Parser;
use sgc_cli::{Cli, ClusterInspectArgs, GenerateArgs, TrainArgs};
use sgc_core::data::{self, DataPaths};
use std::path::Path;

fn generate(dir: &Path, stations: usize, days: usize, seed: u64, signal: f64) {
    sgc_cli::run_generate(&GenerateArgs {
        stations,
        days,
        seed,
        signal,
        out: dir.to_path_buf(),
    })
    .unwrap();
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn generate_writes_all_five_files_byte_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(a.path(), 16, 24, 7, 1.0);
    generate(b.path(), 16, 24, 7, 1.0);
    for name in [
        "stations.csv",
        "trips.csv",
        "weather.csv",
        "holidays.txt",
        "ground_truth.json",
    ] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs");
    }
}

#[test]
fn generate_notes_signal_in_the_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 16, 24, 3, 0.0);
    let sidecar: serde_json::Value =
        serde_json::from_slice(&read(dir.path(), "ground_truth.json")).unwrap();
    assert_eq!(sidecar["signal_strength"], 0.0);
    assert_eq!(sidecar["seed"], 3);
    assert_eq!(sidecar["n_stations"], 16);
}

#[test]
fn generated_files_load_back_to_the_generated_dataset() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 16, 30, 12, 0.8);
    let loaded = data::load_dataset(&DataPaths::in_dir(dir.path())).unwrap();
    let (direct, _) = data::generate_synthetic(16, 30, 12, 0.8).unwrap();
    assert_eq!(loaded.class_counts, direct.class_counts);
    assert_eq!(loaded.graphs.len(), direct.graphs.len());
    for (a, b) in loaded.graphs.iter().zip(direct.graphs.iter()) {
        assert_eq!(a.date, b.date);
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.label, b.label);
        assert_eq!(a.graph_features, b.graph_features);
    }
    assert_eq!(
        loaded.stations.node_features(),
        direct.stations.node_features()
    );
    assert_eq!(loaded.stations.coords(), direct.stations.coords());
}

#[test]
fn train_rejects_model_11_at_the_flag_level() {
    let parse = Cli::try_parse_from([
        "sgc", "train", "--model", "11", "--data", "/tmp/x", "--out", "/tmp/y",
    ]);
    assert!(parse.is_err());
    let parse = Cli::try_parse_from([
        "sgc", "train", "--model", "10", "--data", "/tmp/x", "--out", "/tmp/y",
    ]);
    assert!(parse.is_ok());
}

#[test]
fn short_runs_fall_back_to_the_final_fifth_with_a_warning() {
    let metrics: Vec<sgc_core::model::EpochMetrics> = (1..=10)
        .map(|epoch| sgc_core::model::EpochMetrics {
            epoch,
            train_loss: 1.0,
            val_loss: 2.0,
            train_accuracy: 0.25,
            val_accuracy: 0.5,
        })
        .collect();
    let report = sgc_cli::summary_report(&metrics, 10);
    assert!(report.contains("warning"), "no warning in: {report}");
    assert!(report.contains("[9, 10]"), "wrong window in: {report}");
    assert!(report.contains("2.00 \u{b1} 0.00"));
}

#[test]
fn train_writes_metrics_params_and_manifest_and_evaluate_agrees() {
    let data_dir = tempfile::tempdir().unwrap();
    generate(data_dir.path(), 16, 30, 5, 0.5);
    let run_dir = tempfile::tempdir().unwrap();
    sgc_cli::run_train(&TrainArgs {
        model: 4,
        data: data_dir.path().to_path_buf(),
        epochs: 3,
        batch_size: 8,
        lr: 0.001,
        weight_decay: 0.0001,
        clusters: 4,
        hidden: 8,
        seed: 2,
        out: run_dir.path().to_path_buf(),
        renormalized_adjacency: false,
    })
    .unwrap();

    let metrics = String::from_utf8(read(run_dir.path(), "metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,train_loss,val_loss,train_acc,val_acc"
    );
    assert_eq!(lines.count(), 3);

    let manifest = sgc_cli::RunManifest::load(&run_dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.model_id, 4);
    assert!(manifest.finished_at.is_some());

    let report = sgc_cli::evaluate_run(run_dir.path(), data_dir.path()).unwrap();
    assert!(report.fingerprint_matches);
    // evaluate must reproduce the last epoch's validation metrics exactly
    // (modulo the 6-decimal rounding in the CSV)
    let last = metrics.lines().last().unwrap();
    let cols: Vec<&str> = last.split(',').collect();
    let val_loss: f64 = cols[2].parse().unwrap();
    let val_acc: f64 = cols[4].parse().unwrap();
    assert!((report.val_loss - val_loss).abs() < 1e-5);
    assert!((report.val_accuracy - val_acc).abs() < 1e-5);
}

#[test]
fn evaluating_an_untrained_run_on_balanced_data_is_near_chance() {
    let data_dir = tempfile::tempdir().unwrap();
    generate(data_dir.path(), 16, 200, 15, 0.0);
    let run_dir = tempfile::tempdir().unwrap();
    sgc_cli::run_train(&TrainArgs {
        model: 1,
        data: data_dir.path().to_path_buf(),
        epochs: 0,
        batch_size: 32,
        lr: 0.001,
        weight_decay: 0.0001,
        clusters: 4,
        hidden: 8,
        seed: 3,
        out: run_dir.path().to_path_buf(),
        renormalized_adjacency: false,
    })
    .unwrap();
    let report = sgc_cli::evaluate_run(run_dir.path(), data_dir.path()).unwrap();
    assert!(
        (report.val_accuracy - 1.0 / 6.0).abs() <= 0.1,
        "untrained accuracy {} is not near chance",
        report.val_accuracy
    );
}

#[test]
fn cluster_inspect_table_shape_and_determinism() {
    let data_dir = tempfile::tempdir().unwrap();
    generate(data_dir.path(), 64, 24, 9, 1.0);
    let stations =
        data::load_station_file(&DataPaths::in_dir(data_dir.path()).stations).unwrap();
    let a = sgc_cli::cluster_inspect_report(&stations, 5, 32, 11).unwrap();
    let b = sgc_cli::cluster_inspect_report(&stations, 5, 32, 11).unwrap();
    assert_eq!(a, b);
    let rows: Vec<&str> = a.lines().collect();
    assert_eq!(rows.len(), 1 + 32 + 1); // header + clusters + total line
    let mut total_size = 0usize;
    for row in &rows[1..33] {
        let fields: Vec<&str> = row.split_whitespace().collect();
        total_size += fields[1].parse::<usize>().unwrap();
    }
    assert_eq!(total_size, 64);
    assert!(rows[33].starts_with("NCut"));

    // k >= |V| is rejected
    assert!(sgc_cli::cluster_inspect_report(&stations, 64, 32, 11).is_err());
}

#[test]
fn two_far_blobs_have_near_zero_ncut() {
    // stations in two tight far-apart blobs; K=2 clustering of the KNN graph
    // cuts nothing
    use ndarray::Array2;
    let n = 16;
    let mut coords = Array2::<f64>::zeros((n, 2));
    let mut features = Array2::<f64>::zeros((n, sgc_core::graph::NODE_FEATURE_DIM));
    for u in 0..n {
        let blob = u % 2;
        coords[[u, 0]] = blob as f64 * 100.0 + 0.01 * u as f64;
        coords[[u, 1]] = 0.0;
        features[[u, blob]] = 1.0;
        features[[u, 6]] = 10.0 + u as f64;
    }
    let ids = (0..n).map(|u| format!("s{u}")).collect();
    let stations = sgc_core::graph::StationSet::new(ids, coords, features).unwrap();
    let report = sgc_cli::cluster_inspect_report(&stations, 3, 2, 1).unwrap();
    let ncut_line = report.lines().last().unwrap();
    let value: f64 = ncut_line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(value.abs() < 1e-9, "NCut {value} not ~0 in:\n{report}");
}

#[test]
fn cluster_inspect_args_parse_with_defaults() {
    let cli = Cli::try_parse_from(["sgc", "cluster-inspect", "--data", "/tmp/d"]).unwrap();
    match cli.command {
        sgc_cli::Command::ClusterInspect(ClusterInspectArgs { k, clusters, .. }) => {
            assert_eq!(k, 5);
            assert_eq!(clusters, 32);
        }
        _ => panic!("wrong subcommand"),
    }
}
