//! Implementations of the four subcommands. Each function is callable as a
//! library entry point so integration tests can drive them in-process.

use crate::manifest::{dataset_fingerprint, RunManifest};
use anyhow::{bail, Context, Result};
use clap::Args;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sgc_core::data::{self, DataPaths, SyntheticData};
use sgc_core::model::{
    evaluate, majority_baseline, split_indices, summarize, train, AssignmentProvider,
    MetricsSummary, Model, ModelSpec, TrainConfig,
};
use sgc_core::rng::sub_seed;
use sgc_core::spatial::{cluster_cut_stats, knn_graph, ncut, spectral_clustering};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Number of stations
    #[arg(long, default_value_t = 64)]
    pub stations: usize,
    /// Number of daily graphs
    #[arg(long, default_value_t = 400)]
    pub days: usize,
    /// Master seed for the generator
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Class signal strength in [0, 1]; 0 is pure noise
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
    /// Output directory for the four data files and the sidecar
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model id, 0..=10
    #[arg(long, value_parser = clap::value_parser!(u64).range(0..=10))]
    pub model: u64,
    /// Directory holding stations.csv, trips.csv, weather.csv, holidays.txt
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long = "batch-size", default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long = "weight-decay", default_value_t = 0.0001)]
    pub weight_decay: f64,
    /// Number of coarsening clusters
    #[arg(long, default_value_t = 32)]
    pub clusters: usize,
    /// Hidden embedding width
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for manifest, metrics, and parameters
    #[arg(long)]
    pub out: PathBuf,
    /// Use the renormalized GCN operator instead of I + normalized A
    #[arg(long = "renormalized-adjacency", default_value_t = false)]
    pub renormalized_adjacency: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of a finished training run
    #[arg(long)]
    pub run: PathBuf,
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterInspectArgs {
    /// Dataset directory (only stations.csv is read)
    #[arg(long)]
    pub data: PathBuf,
    /// KNN neighbor count
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 32)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Writes the four data files plus the ground-truth sidecar.
pub fn run_generate(args: &GenerateArgs) -> Result<()> {
    let raw = data::generate_synthetic_records(args.stations, args.days, args.seed, args.signal)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_synthetic_files(&raw, &args.out)?;
    println!(
        "wrote {} stations, {} days ({} trip rows) to {}",
        args.stations,
        args.days,
        raw.trips.len(),
        args.out.display()
    );
    Ok(())
}

fn write_synthetic_files(raw: &SyntheticData, dir: &Path) -> Result<()> {
    let paths = DataPaths::in_dir(dir);

    let mut stations = String::from("station_id,x,y");
    for c in 0..sgc_core::graph::LANDUSE_DIM {
        write!(stations, ",landuse_{c}")?;
    }
    for c in 0..sgc_core::graph::HOUSEHOLD_DIM {
        write!(stations, ",households_{c}")?;
    }
    stations.push('\n');
    let coords = raw.stations.coords();
    let features = raw.stations.node_features();
    for (u, id) in raw.stations.ids().iter().enumerate() {
        write!(stations, "{id},{},{}", coords[[u, 0]], coords[[u, 1]])?;
        for c in 0..features.ncols() {
            write!(stations, ",{}", features[[u, c]])?;
        }
        stations.push('\n');
    }
    atomic_write(&paths.stations, stations.as_bytes())?;

    let ids = raw.stations.ids();
    let mut trips = String::from("date,origin,destination,count\n");
    for t in &raw.trips {
        writeln!(
            trips,
            "{},{},{},{}",
            t.date, ids[t.origin], ids[t.destination], t.count
        )?;
    }
    atomic_write(&paths.trips, trips.as_bytes())?;

    let mut weather =
        String::from("date,precip_mm,cloud_fraction,temp_mean,temp_max,temp_min\n");
    for w in &raw.weather {
        writeln!(
            weather,
            "{},{},{},{},{},{}",
            w.date, w.precipitation_mm, w.cloud_cover_fraction, w.temp_mean, w.temp_max, w.temp_min
        )?;
    }
    atomic_write(&paths.weather, weather.as_bytes())?;

    let mut holidays = String::new();
    for d in &raw.holidays {
        writeln!(holidays, "{d}")?;
    }
    atomic_write(&paths.holidays, holidays.as_bytes())?;

    let sidecar = serde_json::to_vec_pretty(&raw.ground_truth)?;
    atomic_write(&dir.join("ground_truth.json"), &sidecar)?;
    Ok(())
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Trains one model and writes manifest, per-epoch metrics CSV, and the
/// final parameters.
pub fn run_train(args: &TrainArgs) -> Result<()> {
    let paths = DataPaths::in_dir(&args.data);
    let dataset = data::load_dataset(&paths)?;
    let fingerprint = dataset_fingerprint(&paths)?;

    let mut spec = ModelSpec::from_table(args.model as usize, args.clusters, args.hidden)?;
    spec.renormalized_adjacency = args.renormalized_adjacency;
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        weight_decay: args.weight_decay,
        train_fraction: 0.8,
        seed: args.seed,
    };
    config.validate()?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let manifest_path = args.out.join("manifest.json");
    let mut manifest = RunManifest {
        model_id: spec.id,
        spec: spec.clone(),
        config: config.clone(),
        seed: args.seed,
        dataset_fingerprint: fingerprint,
        started_at: now_rfc3339(),
        finished_at: None,
        metrics_path: "metrics.csv".into(),
        params_path: "params.json".into(),
    };
    manifest.save(&manifest_path)?;

    let out = train(&spec, &dataset, &config)?;

    let mut csv = String::from("epoch,train_loss,val_loss,train_acc,val_acc\n");
    for m in &out.metrics {
        writeln!(
            csv,
            "{},{:.6},{:.6},{:.6},{:.6}",
            m.epoch, m.train_loss, m.val_loss, m.train_accuracy, m.val_accuracy
        )?;
    }
    atomic_write(&args.out.join(&manifest.metrics_path), csv.as_bytes())?;
    save_params(&out.model, &args.out.join(&manifest.params_path))?;

    manifest.finished_at = Some(now_rfc3339());
    manifest.save(&manifest_path)?;

    print!("{}", summary_report(&out.metrics, config.epochs));
    Ok(())
}

/// The post-training summary: `mean ± std` per column over epochs
/// `[400, 500]`, falling back to the final 20% of epochs (with a warning)
/// on shorter runs.
pub fn summary_report(metrics: &[sgc_core::model::EpochMetrics], epochs: usize) -> String {
    const FROM: usize = 400;
    const TO: usize = 500;
    let mut out = String::new();
    let summary = if epochs >= TO {
        summarize(metrics, FROM, TO).ok()
    } else {
        None
    };
    let summary = match summary {
        Some(s) => s,
        None => {
            if metrics.is_empty() {
                let _ = writeln!(out, "warning: no epochs were trained; nothing to summarize");
                return out;
            }
            let window = (epochs / 5).max(1);
            let from = epochs - window + 1;
            let _ = writeln!(
                out,
                "warning: summary window [{FROM}, {TO}] unavailable for a {epochs}-epoch run; \
                 using the final 20%: epochs [{from}, {epochs}]"
            );
            match summarize(metrics, from, epochs) {
                Ok(s) => s,
                Err(e) => {
                    let _ = writeln!(out, "warning: could not summarize: {e}");
                    return out;
                }
            }
        }
    };
    let _ = writeln!(
        out,
        "summary over epochs [{}, {}] (mean \u{b1} std):",
        summary.from_epoch, summary.to_epoch
    );
    let _ = writeln!(out, "  train loss  {}", MetricsSummary::format_cell(summary.train_loss));
    let _ = writeln!(out, "  val loss    {}", MetricsSummary::format_cell(summary.val_loss));
    let _ = writeln!(out, "  train acc   {}", MetricsSummary::format_cell(summary.train_accuracy));
    let _ = writeln!(out, "  val acc     {}", MetricsSummary::format_cell(summary.val_accuracy));
    out
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    format_version: u32,
    spec: ModelSpec,
    node_feature_dim: usize,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

fn save_params(model: &Model, path: &Path) -> Result<()> {
    let params = model
        .state()
        .into_iter()
        .map(|(name, values)| {
            let (rows, cols) = values.dim();
            ParamEntry {
                name,
                rows,
                cols,
                values: values.into_iter().collect(),
            }
        })
        .collect();
    let file = ParamsFile {
        format_version: 1,
        spec: model.spec.clone(),
        node_feature_dim: model.node_feature_dim,
        params,
    };
    atomic_write(path, &serde_json::to_vec(&file)?)
}

fn load_params(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let file: ParamsFile = serde_json::from_slice(&bytes)?;
    if file.format_version != 1 {
        bail!("unsupported params format version {}", file.format_version);
    }
    let mut state = Vec::with_capacity(file.params.len());
    for p in file.params {
        let values = Array2::from_shape_vec((p.rows, p.cols), p.values)
            .with_context(|| format!("parameter {} has a bad shape", p.name))?;
        state.push((p.name, values));
    }
    let mut model = Model::new(&file.spec, file.node_feature_dim, 0);
    model.load_state(&state)?;
    Ok(model)
}

/// What `evaluate` reports for a finished run.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub majority_baseline: f64,
    pub fingerprint_matches: bool,
}

/// Evaluates a finished run on the validation split reconstructed from the
/// run's seed, comparing against the full-dataset majority baseline.
pub fn evaluate_run(run_dir: &Path, data_dir: &Path) -> Result<EvalReport> {
    let manifest = RunManifest::load(&run_dir.join("manifest.json"))?;
    let model = load_params(&run_dir.join(&manifest.params_path))?;

    let paths = DataPaths::in_dir(data_dir);
    let dataset = data::load_dataset(&paths)?;
    let fingerprint = dataset_fingerprint(&paths)?;

    let (_, val) = split_indices(
        dataset.graphs.len(),
        manifest.config.train_fraction,
        manifest.config.seed,
    );
    let provider = AssignmentProvider::new(&model.spec, &dataset.stations, manifest.config.seed)?;
    let (val_loss, val_accuracy) = evaluate(
        &model,
        &dataset,
        &provider,
        &val,
        manifest.config.batch_size,
    )?;
    Ok(EvalReport {
        val_loss,
        val_accuracy,
        majority_baseline: majority_baseline(&dataset.labels())?,
        fingerprint_matches: fingerprint == manifest.dataset_fingerprint,
    })
}

pub fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let report = evaluate_run(&args.run, &args.data)?;
    if !report.fingerprint_matches {
        println!("warning: dataset fingerprint does not match the training run's");
    }
    println!("validation loss:     {:.4}", report.val_loss);
    println!("validation accuracy: {:.4}", report.val_accuracy);
    println!("majority baseline:   {:.4}", report.majority_baseline);
    println!(
        "accuracy - baseline: {:+.4}",
        report.val_accuracy - report.majority_baseline
    );
    Ok(())
}

/// Prints per-cluster size, internal edge weight, and cut/volume for the
/// spectral clustering of the KNN graph, plus the total NCut.
pub fn run_cluster_inspect(args: &ClusterInspectArgs) -> Result<()> {
    let paths = DataPaths::in_dir(&args.data);
    let stations = data::load_station_file(&paths.stations)?;
    let report = cluster_inspect_report(&stations, args.k, args.clusters, args.seed)?;
    print!("{report}");
    Ok(())
}

/// The cluster-inspect table as a string (separated out for tests).
pub fn cluster_inspect_report(
    stations: &sgc_core::graph::StationSet,
    k: usize,
    clusters: usize,
    seed: u64,
) -> Result<String> {
    let knn = knn_graph(stations.coords(), k)?;
    let assignment = spectral_clustering(&knn.adjacency, clusters, sub_seed(seed, "spectral"))?;
    let stats = cluster_cut_stats(&knn.adjacency, &assignment)?;
    let labels = assignment.labels();
    let partition: Vec<Vec<usize>> = (0..clusters)
        .map(|c| (0..labels.len()).filter(|&u| labels[u] == c).collect())
        .collect();
    let total_ncut = ncut(&knn.adjacency, &partition)?;

    let mut out = String::new();
    writeln!(out, "cluster  size  internal_weight  cut_over_vol")?;
    for c in 0..clusters {
        writeln!(
            out,
            "{c:>7}  {:>4}  {:>15.1}  {:>12.4}",
            stats.sizes[c], stats.internal_weight[c], stats.cut_over_vol[c]
        )?;
    }
    writeln!(
        out,
        "NCut of the {clusters}-way partition (k={k}): {total_ncut:.4}"
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_fallback_window_arithmetic() {
        // 10 epochs -> final 20% is epochs [9, 10]
        let metrics: Vec<sgc_core::model::EpochMetrics> = (1..=10)
            .map(|epoch| sgc_core::model::EpochMetrics {
                epoch,
                train_loss: 1.0,
                val_loss: 1.0,
                train_accuracy: 0.5,
                val_accuracy: 0.5,
            })
            .collect();
        let window = (10usize / 5).max(1);
        let from = 10 - window + 1;
        assert_eq!((from, 10), (9, 10));
        assert!(summarize(&metrics, from, 10).is_ok());
    }
}
