//! The 11-architecture model matrix, batching, and the training protocol.

mod assignment;
mod net;
mod train;

pub use assignment::{prepare_assignment, AssignmentProvider, GraphAssignment};
pub use net::{build_batch, Batch, Model};
pub use train::{evaluate, split_indices, train, TrainOutput};

use crate::error::{Error, Result};
use crate::graph::{AdjacencyMode, N_CLASSES};
use serde::{Deserialize, Serialize};

/// Source of the cluster assignment matrix, when coarsening is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coarsening {
    /// No coarsening; node embeddings are pooled directly.
    None,
    /// Clusters recomputed from each day's unweighted adjacency.
    FromDailyAdjacency,
    /// Clusters computed once from the KNN graph over station coordinates.
    Knn { k: usize },
}

/// One row of the model matrix: adjacency mode x coarsening source, plus
/// the width hyperparameters shared by every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: usize,
    pub adjacency_mode: AdjacencyMode,
    pub coarsening: Coarsening,
    pub use_graph_features: bool,
    pub n_clusters: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
    /// Alternative GCN operator `D~^{-1/2}(A+I)D~^{-1/2}` instead of the
    /// default `I + D^{-1/2}AD^{-1/2}`. Off by default.
    #[serde(default)]
    pub renormalized_adjacency: bool,
}

impl ModelSpec {
    /// The model with the given id (0..=10), with default widths
    /// `n_clusters = 32` and `hidden_dim = 64`.
    pub fn from_id(id: usize) -> Result<Self> {
        Self::from_table(id, 32, 64)
    }

    /// The model with the given id and explicit widths.
    pub fn from_table(id: usize, n_clusters: usize, hidden_dim: usize) -> Result<Self> {
        use AdjacencyMode::{Unweighted, Weighted};
        let (adjacency_mode, coarsening, use_graph_features) = match id {
            0 => (Unweighted, Coarsening::None, false),
            1 => (Unweighted, Coarsening::None, true),
            2 => (Weighted, Coarsening::None, true),
            3 => (Unweighted, Coarsening::FromDailyAdjacency, true),
            4 => (Unweighted, Coarsening::Knn { k: 5 }, true),
            5 => (Unweighted, Coarsening::Knn { k: 50 }, true),
            6 => (Unweighted, Coarsening::Knn { k: 150 }, true),
            7 => (Weighted, Coarsening::FromDailyAdjacency, true),
            8 => (Weighted, Coarsening::Knn { k: 5 }, true),
            9 => (Weighted, Coarsening::Knn { k: 50 }, true),
            10 => (Weighted, Coarsening::Knn { k: 150 }, true),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "model id must be 0..=10, got {id}"
                )))
            }
        };
        Ok(Self {
            id,
            adjacency_mode,
            coarsening,
            use_graph_features,
            n_clusters,
            hidden_dim,
            n_classes: N_CLASSES,
            renormalized_adjacency: false,
        })
    }

    /// All 11 specs in id order.
    pub fn all(n_clusters: usize, hidden_dim: usize) -> Vec<Self> {
        (0..=10)
            .map(|id| Self::from_table(id, n_clusters, hidden_dim).unwrap())
            .collect()
    }

    pub fn uses_coarsening(&self) -> bool {
        self.coarsening != Coarsening::None
    }
}

/// Training protocol hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 32,
            lr: 0.001,
            weight_decay: 0.0001,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::InvalidArgument("learning rate must be >= 0".into()));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("weight decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Loss and accuracy on both splits after one epoch. Epochs are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Mean and population standard deviation of each metric column over an
/// inclusive epoch window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub from_epoch: usize,
    pub to_epoch: usize,
    pub n_epochs: usize,
    pub train_loss: (f64, f64),
    pub val_loss: (f64, f64),
    pub train_accuracy: (f64, f64),
    pub val_accuracy: (f64, f64),
}

impl MetricsSummary {
    /// `mean ± std` with two decimals, the reporting convention for result
    /// tables.
    pub fn format_cell(stat: (f64, f64)) -> String {
        format!("{:.2} \u{b1} {:.2}", stat.0, stat.1)
    }
}

/// Aggregates metrics over the inclusive window `[from_epoch, to_epoch]`.
pub fn summarize(
    metrics: &[EpochMetrics],
    from_epoch: usize,
    to_epoch: usize,
) -> Result<MetricsSummary> {
    if from_epoch > to_epoch {
        return Err(Error::InvalidArgument(format!(
            "bad summary window [{from_epoch}, {to_epoch}]"
        )));
    }
    let window: Vec<&EpochMetrics> = metrics
        .iter()
        .filter(|m| (from_epoch..=to_epoch).contains(&m.epoch))
        .collect();
    let expected = to_epoch - from_epoch + 1;
    if window.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "metrics cover only {} of the {expected} epochs in [{from_epoch}, {to_epoch}]",
            window.len()
        )));
    }
    let stat = |get: fn(&EpochMetrics) -> f64| {
        let n = window.len() as f64;
        let mean = window.iter().map(|m| get(m)).sum::<f64>() / n;
        let var = window.iter().map(|m| (get(m) - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    Ok(MetricsSummary {
        from_epoch,
        to_epoch,
        n_epochs: window.len(),
        train_loss: stat(|m| m.train_loss),
        val_loss: stat(|m| m.val_loss),
        train_accuracy: stat(|m| m.train_accuracy),
        val_accuracy: stat(|m| m.val_accuracy),
    })
}

/// Accuracy of always predicting the most frequent class.
pub fn majority_baseline(labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument(
            "majority baseline of an empty label set".into(),
        ));
    }
    let mut counts = [0usize; N_CLASSES];
    for &l in labels {
        counts[l.min(N_CLASSES - 1)] += 1;
    }
    Ok(*counts.iter().max().unwrap() as f64 / labels.len() as f64)
}
