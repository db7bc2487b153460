//! Training protocol: seeded 80/20 split, shuffled mini-batches, Adam
//! updates, and per-epoch metrics on both splits.

use super::assignment::AssignmentProvider;
use super::net::{build_batch, Batch, Model};
use super::{EpochMetrics, ModelSpec, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::DailyGraph;
use crate::nn::{self, AdamState};
use crate::rng;
use rand::seq::SliceRandom;
use std::rc::Rc;

/// Seeded shuffle followed by an 80/20 (or `train_fraction`) cut.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(seed, "split");
    indices.shuffle(&mut rng);
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let n_train = n_train.clamp(1, n.saturating_sub(1).max(1));
    let val = indices.split_off(n_train.min(n));
    (indices, val)
}

/// A finished training run: per-epoch metrics plus the trained model.
pub struct TrainOutput {
    pub metrics: Vec<EpochMetrics>,
    pub model: Model,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

fn batch_with_assignments<'a>(
    spec: &ModelSpec,
    dataset: &'a Dataset,
    provider: &AssignmentProvider,
    graphs: &[&'a DailyGraph],
) -> Result<Batch> {
    let assignments = if spec.uses_coarsening() {
        let mut list = Vec::with_capacity(graphs.len());
        for g in graphs {
            let a = provider
                .for_graph(&dataset.stations, g)?
                .ok_or_else(|| Error::InvalidArgument("missing assignment".into()))?;
            list.push(Rc::clone(&a));
        }
        Some(list)
    } else {
        None
    };
    build_batch(spec, &dataset.stations, graphs, assignments.as_deref())
}

/// Mean loss and accuracy over the given graphs, dropout disabled.
pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    provider: &AssignmentProvider,
    indices: &[usize],
    batch_size: usize,
) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("evaluation on an empty split".into()));
    }
    let mut rng = rng::stream(0, "eval");
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size) {
        let graphs: Vec<&DailyGraph> = chunk.iter().map(|&i| &dataset.graphs[i]).collect();
        let batch = batch_with_assignments(&model.spec, dataset, provider, &graphs)?;
        let logits = model.forward(&batch, false, &mut rng)?;
        let loss = nn::softmax_cross_entropy(&logits, &batch.labels)?;
        total_loss += loss.scalar() * graphs.len() as f64;
        correct += count_correct(&logits.to_array(), &batch.labels);
    }
    Ok((
        total_loss / indices.len() as f64,
        correct as f64 / indices.len() as f64,
    ))
}

fn count_correct(logits: &ndarray::Array2<f64>, labels: &[usize]) -> usize {
    logits
        .rows()
        .into_iter()
        .zip(labels.iter())
        .filter(|(row, &label)| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best == label
        })
        .count()
}

/// Trains a fresh model under the given protocol and records per-epoch
/// metrics. Both splits are re-evaluated after each epoch with dropout
/// disabled, so an `lr = 0` run reports constant metrics.
pub fn train(spec: &ModelSpec, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let n = dataset.graphs.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 2 graphs, got {n}"
        )));
    }
    let (train_indices, val_indices) = split_indices(n, config.train_fraction, config.seed);
    if train_indices.is_empty() || val_indices.is_empty() {
        return Err(Error::InvalidArgument("empty train or validation split".into()));
    }

    let provider = AssignmentProvider::new(spec, &dataset.stations, config.seed)?;
    provider.precompute(&dataset.stations, &dataset.graphs)?;

    let model = Model::new(spec, dataset.stations.node_features().ncols(), config.seed);
    let params = model.parameters();
    let mut adam = AdamState::new(config.lr, config.weight_decay);

    let mut metrics = Vec::with_capacity(config.epochs);
    let mut order = train_indices.clone();
    for epoch in 1..=config.epochs {
        let mut epoch_rng = rng::stream(config.seed, &format!("epoch/{epoch}"));
        order.shuffle(&mut epoch_rng);
        for chunk in order.chunks(config.batch_size) {
            let graphs: Vec<&DailyGraph> = chunk.iter().map(|&i| &dataset.graphs[i]).collect();
            let batch = batch_with_assignments(spec, dataset, &provider, &graphs)?;
            let logits = model.forward(&batch, true, &mut epoch_rng)?;
            let loss = nn::softmax_cross_entropy(&logits, &batch.labels)?;
            loss.backward()?;
            adam.step(&params)?;
            nn::zero_grads(&params);
        }
        let (train_loss, train_accuracy) =
            evaluate(&model, dataset, &provider, &train_indices, config.batch_size)?;
        let (val_loss, val_accuracy) =
            evaluate(&model, dataset, &provider, &val_indices, config.batch_size)?;
        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            train_accuracy,
            val_accuracy,
        });
    }
    Ok(TrainOutput {
        metrics,
        model,
        train_indices,
        val_indices,
    })
}
