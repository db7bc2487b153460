//! Model assembly and the batched forward pass.
//!
//! Graphs in a batch are combined block-diagonally: node features are
//! stacked, per-graph normalized adjacencies become blocks of one operator,
//! and pooling maps each graph's nodes (or clusters) to its own output row.

use super::assignment::GraphAssignment;
use super::ModelSpec;
use crate::error::{Error, Result};
use crate::graph::{self, DailyGraph, StationSet};
use crate::nn::{
    self, gcn_layer, glorot_uniform, graphconv_layer, Activation, BlockDiag, Parameter, Tensor,
};
use crate::rng;
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

/// A block-diagonal batch ready for the forward pass.
pub struct Batch {
    pub node_features: Array2<f64>,
    pub adjacency: Rc<BlockDiag>,
    pub graph_features: Array2<f64>,
    pub labels: Vec<usize>,
    pub node_graph_index: Vec<usize>,
    pub coarse: Option<CoarseBatch>,
}

/// Coarsening operators for a batch: pooling blocks `S^T` and the pooled
/// adjacency blocks, plus the cluster-to-graph index for mean pooling.
pub struct CoarseBatch {
    pub pool: Rc<BlockDiag>,
    pub pooled_adjacency: Rc<BlockDiag>,
    pub cluster_graph_index: Vec<usize>,
}

impl Batch {
    pub fn n_graphs(&self) -> usize {
        self.labels.len()
    }
}

/// Assembles a batch for `spec` from whole graphs over the shared station
/// universe. `assignments` must be `None` exactly when the spec does not
/// coarsen, and hold one prepared assignment per graph otherwise.
pub fn build_batch(
    spec: &ModelSpec,
    stations: &StationSet,
    graphs: &[&DailyGraph],
    assignments: Option<&[Rc<GraphAssignment>]>,
) -> Result<Batch> {
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if spec.uses_coarsening() != assignments.is_some() {
        return Err(Error::InvalidArgument(
            "assignments must be provided when and only when the spec coarsens".into(),
        ));
    }
    if let Some(a) = assignments {
        if a.len() != graphs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} assignments for {} graphs",
                a.len(),
                graphs.len()
            )));
        }
    }
    let n = stations.len();
    let n_graphs = graphs.len();
    let feature_dim = stations.node_features().ncols();

    let mut node_features = Array2::zeros((n * n_graphs, feature_dim));
    let mut node_graph_index = Vec::with_capacity(n * n_graphs);
    let mut adjacency_blocks = Vec::with_capacity(n_graphs);
    let mut graph_features = Array2::zeros((n_graphs, 3));
    let mut labels = Vec::with_capacity(n_graphs);

    for (g, graph) in graphs.iter().enumerate() {
        node_features
            .slice_mut(ndarray::s![g * n..(g + 1) * n, ..])
            .assign(stations.node_features());
        node_graph_index.extend(std::iter::repeat(g).take(n));
        adjacency_blocks.push(build_gcn_operator(spec, graph, n)?);
        for (c, &t) in graph.graph_features.iter().enumerate() {
            graph_features[[g, c]] = t;
        }
        labels.push(graph.label);
    }

    let coarse = match assignments {
        None => None,
        Some(assignments) => {
            let mut pool_blocks = Vec::with_capacity(n_graphs);
            let mut pooled_adj_blocks = Vec::with_capacity(n_graphs);
            let mut cluster_graph_index = Vec::new();
            for (g, a) in assignments.iter().enumerate() {
                if a.assignment.n_nodes() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "assignment covers {} nodes but the station set has {n}",
                        a.assignment.n_nodes()
                    )));
                }
                pool_blocks.push(a.assignment.matrix().t().to_owned());
                pooled_adj_blocks.push(a.pooled_adjacency.clone());
                cluster_graph_index
                    .extend(std::iter::repeat(g).take(a.assignment.n_clusters()));
            }
            Some(CoarseBatch {
                pool: Rc::new(BlockDiag::new(pool_blocks)),
                pooled_adjacency: Rc::new(BlockDiag::new(pooled_adj_blocks)),
                cluster_graph_index,
            })
        }
    };

    Ok(Batch {
        node_features,
        adjacency: Rc::new(BlockDiag::new(adjacency_blocks)),
        graph_features,
        labels,
        node_graph_index,
        coarse,
    })
}

/// The per-graph message-passing operator. In the default mode this is the
/// normalized adjacency (the layer adds the identity itself); in the
/// renormalized mode the identity is folded into the normalization and the
/// layer applies the operator alone.
fn build_gcn_operator(spec: &ModelSpec, graph: &DailyGraph, n: usize) -> Result<Array2<f64>> {
    if spec.renormalized_adjacency {
        let adj = graph::build_adjacency(graph, n, spec.adjacency_mode)?;
        let mut with_self = adj.values().clone();
        for i in 0..n {
            with_self[[i, i]] += 1.0;
        }
        let degrees = with_self.sum_axis(ndarray::Axis(1));
        Ok(graph::normalize_dense(&with_self, &degrees))
    } else {
        graph::normalized_daily_adjacency(graph, n, spec.adjacency_mode)
    }
}

/// One model instance: the layer stack of its spec plus its parameters.
///
/// Stack: GCNConv(f -> d) + ReLU + Dropout(0.5) + GCNConv(d -> d), then on
/// coarsened specs pool through `S^T` and apply GraphConv(d -> d) + ReLU;
/// global mean pooling, optional concatenation of the 3 graph features,
/// Linear(-> d) + ReLU + Dropout(0.5) + Linear(-> 6).
pub struct Model {
    pub spec: ModelSpec,
    pub node_feature_dim: usize,
    gcn1_w: Parameter,
    gcn1_b: Parameter,
    gcn2_w: Parameter,
    gcn2_b: Parameter,
    conv: Option<(Parameter, Parameter, Parameter)>,
    fc1_w: Parameter,
    fc1_b: Parameter,
    fc2_w: Parameter,
    fc2_b: Parameter,
}

pub(crate) const DROPOUT_P: f64 = 0.5;

impl Model {
    /// Fresh Glorot-initialized parameters from the run seed.
    pub fn new(spec: &ModelSpec, node_feature_dim: usize, seed: u64) -> Self {
        let d = spec.hidden_dim;
        let mut rng = rng::stream(seed, "init");
        let mut weight = |name: &str, rows: usize, cols: usize| {
            Parameter::new(name, glorot_uniform(rows, cols, &mut rng))
        };
        let gcn1_w = weight("gcn1.weight", d, node_feature_dim);
        let gcn1_b = Parameter::new("gcn1.bias", Array2::zeros((1, d)));
        let gcn2_w = weight("gcn2.weight", d, d);
        let gcn2_b = Parameter::new("gcn2.bias", Array2::zeros((1, d)));
        let conv = if spec.uses_coarsening() {
            let w_self = weight("graphconv.w_self", d, d);
            let w_neigh = weight("graphconv.w_neigh", d, d);
            let b = Parameter::new("graphconv.bias", Array2::zeros((1, d)));
            Some((w_self, w_neigh, b))
        } else {
            None
        };
        let fc1_in = d + if spec.use_graph_features { 3 } else { 0 };
        let fc1_w = weight("fc1.weight", d, fc1_in);
        let fc1_b = Parameter::new("fc1.bias", Array2::zeros((1, d)));
        let fc2_w = weight("fc2.weight", spec.n_classes, d);
        let fc2_b = Parameter::new("fc2.bias", Array2::zeros((1, spec.n_classes)));
        Self {
            spec: spec.clone(),
            node_feature_dim,
            gcn1_w,
            gcn1_b,
            gcn2_w,
            gcn2_b,
            conv,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
        }
    }

    /// All trainable parameters, in a fixed order.
    pub fn parameters(&self) -> Vec<Parameter> {
        let mut out = vec![
            self.gcn1_w.clone(),
            self.gcn1_b.clone(),
            self.gcn2_w.clone(),
            self.gcn2_b.clone(),
        ];
        if let Some((w1, w2, b)) = &self.conv {
            out.extend([w1.clone(), w2.clone(), b.clone()]);
        }
        out.extend([
            self.fc1_w.clone(),
            self.fc1_b.clone(),
            self.fc2_w.clone(),
            self.fc2_b.clone(),
        ]);
        out
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.parameters()
            .iter()
            .map(|p| {
                let (r, c) = p.tensor.shape();
                r * c
            })
            .sum()
    }

    /// Logits for a batch, one row per graph.
    pub fn forward(&self, batch: &Batch, training: bool, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let identity = !self.spec.renormalized_adjacency;
        let h0 = Tensor::constant(batch.node_features.clone());
        let h1 = self.gcn(&h0, batch, &self.gcn1_w, &self.gcn1_b, Activation::Relu, identity)?;
        let h1 = nn::dropout(&h1, DROPOUT_P, training, rng)?;
        let h2 = self.gcn(&h1, batch, &self.gcn2_w, &self.gcn2_b, Activation::Identity, identity)?;

        let (pooled_input, graph_index): (Tensor, &[usize]) = match (&batch.coarse, &self.conv) {
            (Some(coarse), Some((w_self, w_neigh, b))) => {
                let z_pool = nn::block_mix(&coarse.pool, &h2)?;
                let mixed = graphconv_layer(
                    &z_pool,
                    &coarse.pooled_adjacency,
                    &w_self.tensor,
                    &w_neigh.tensor,
                    &b.tensor,
                )?;
                (nn::relu(&mixed), coarse.cluster_graph_index.as_slice())
            }
            (None, None) => (h2, batch.node_graph_index.as_slice()),
            _ => {
                return Err(Error::InvalidArgument(
                    "batch coarsening does not match the model spec".into(),
                ))
            }
        };
        let pooled = nn::global_mean_pool(&pooled_input, graph_index, batch.n_graphs())?;

        let head_input = if self.spec.use_graph_features {
            let feats = Tensor::constant(batch.graph_features.clone());
            nn::concat_cols(&pooled, &feats)?
        } else {
            pooled
        };
        let f1 = nn::linear(&head_input, &self.fc1_w.tensor, Some(&self.fc1_b.tensor))?;
        let f1 = nn::relu(&f1);
        let f1 = nn::dropout(&f1, DROPOUT_P, training, rng)?;
        nn::linear(&f1, &self.fc2_w.tensor, Some(&self.fc2_b.tensor))
    }

    fn gcn(
        &self,
        h: &Tensor,
        batch: &Batch,
        w: &Parameter,
        b: &Parameter,
        activation: Activation,
        include_identity: bool,
    ) -> Result<Tensor> {
        if include_identity {
            gcn_layer(h, &batch.adjacency, &w.tensor, &b.tensor, activation)
        } else {
            let mixed = nn::block_mix(&batch.adjacency, h)?;
            let out = nn::linear(&mixed, &w.tensor, Some(&b.tensor))?;
            Ok(activation.apply(&out))
        }
    }

    /// Named snapshots of the parameter values.
    pub fn state(&self) -> Vec<(String, Array2<f64>)> {
        self.parameters()
            .iter()
            .map(|p| (p.name.clone(), p.tensor.to_array()))
            .collect()
    }

    /// Restores parameter values from a snapshot taken with [`Model::state`].
    pub fn load_state(&mut self, state: &[(String, Array2<f64>)]) -> Result<()> {
        let params = self.parameters();
        if state.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "snapshot has {} tensors, model expects {}",
                state.len(),
                params.len()
            )));
        }
        for (p, (name, values)) in params.iter().zip(state.iter()) {
            if &p.name != name {
                return Err(Error::InvalidArgument(format!(
                    "snapshot tensor {name:?} does not match parameter {:?}",
                    p.name
                )));
            }
            if p.tensor.shape() != values.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "snapshot tensor {name:?} has shape {:?}, expected {:?}",
                    values.dim(),
                    p.tensor.shape()
                )));
            }
            p.tensor.values_mut().assign(values);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::model::{AssignmentProvider, ModelSpec};
    use crate::rng::stream;

    fn toy() -> crate::data::Dataset {
        generate_synthetic(16, 24, 42, 0.5).unwrap().0
    }

    fn batch_for(
        spec: &ModelSpec,
        ds: &crate::data::Dataset,
        graphs: &[&DailyGraph],
        seed: u64,
    ) -> Batch {
        let provider = AssignmentProvider::new(spec, &ds.stations, seed).unwrap();
        let assignments = if spec.uses_coarsening() {
            Some(
                graphs
                    .iter()
                    .map(|g| provider.for_graph(&ds.stations, g).unwrap().unwrap())
                    .collect::<Vec<_>>(),
            )
        } else {
            None
        };
        build_batch(spec, &ds.stations, graphs, assignments.as_deref()).unwrap()
    }

    #[test]
    fn parameter_count_audit() {
        let d = 8;
        let f = crate::graph::NODE_FEATURE_DIM;
        let spec0 = ModelSpec::from_table(0, 4, d).unwrap();
        let model0 = Model::new(&spec0, f, 1);
        // gcn1: d*f + d, gcn2: d*d + d, fc1: d*d + d, fc2: 6d + 6
        let expect0 = d * f + d + d * d + d + d * d + d + 6 * d + 6;
        assert_eq!(model0.parameter_count(), expect0);

        let spec4 = ModelSpec::from_table(4, 4, d).unwrap();
        let model4 = Model::new(&spec4, f, 1);
        // extra GraphConv (2d^2 + d) and 3 more fc1 input columns
        let expect4 = expect0 + 2 * d * d + d + 3 * d;
        assert_eq!(model4.parameter_count(), expect4);
    }

    #[test]
    fn batch_of_one_equals_unbatched_rows() {
        let ds = toy();
        let spec = ModelSpec::from_table(1, 4, 8).unwrap();
        let model = Model::new(&spec, crate::graph::NODE_FEATURE_DIM, 3);
        let graphs: Vec<&DailyGraph> = ds.graphs.iter().take(3).collect();
        let full = batch_for(&spec, &ds, &graphs, 3);
        let mut rng = stream(0, "eval");
        let logits = model.forward(&full, false, &mut rng).unwrap().to_array();
        for (g, graph) in graphs.iter().enumerate() {
            let single = batch_for(&spec, &ds, &[graph], 3);
            let row = model
                .forward(&single, false, &mut stream(0, "eval"))
                .unwrap()
                .to_array();
            for c in 0..spec.n_classes {
                assert!(
                    (logits[[g, c]] - row[[0, c]]).abs() <= 1e-9,
                    "row {g} col {c}: {} vs {}",
                    logits[[g, c]],
                    row[[0, c]]
                );
            }
        }
    }

    #[test]
    fn permuting_batch_order_permutes_logits_rows() {
        let ds = toy();
        let spec = ModelSpec::from_table(4, 4, 8).unwrap();
        let model = Model::new(&spec, crate::graph::NODE_FEATURE_DIM, 5);
        let graphs: Vec<&DailyGraph> = ds.graphs.iter().take(4).collect();
        let fwd = |gs: &[&DailyGraph]| {
            let batch = batch_for(&spec, &ds, gs, 5);
            model
                .forward(&batch, false, &mut stream(0, "eval"))
                .unwrap()
                .to_array()
        };
        let base = fwd(&graphs);
        let swapped: Vec<&DailyGraph> = vec![graphs[2], graphs[0], graphs[3], graphs[1]];
        let permuted = fwd(&swapped);
        for (new, &old) in [2usize, 0, 3, 1].iter().enumerate() {
            for c in 0..spec.n_classes {
                assert!((permuted[[new, c]] - base[[old, c]]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn duplicated_graph_duplicates_its_logits_row() {
        let ds = toy();
        let spec = ModelSpec::from_table(2, 4, 8).unwrap();
        let model = Model::new(&spec, crate::graph::NODE_FEATURE_DIM, 9);
        let g = &ds.graphs[0];
        let batch = batch_for(&spec, &ds, &[g, g], 9);
        let logits = model
            .forward(&batch, false, &mut stream(0, "eval"))
            .unwrap()
            .to_array();
        for c in 0..spec.n_classes {
            assert!((logits[[0, c]] - logits[[1, c]]).abs() <= 1e-12);
        }
    }

    #[test]
    fn empty_batch_is_an_input_error() {
        let ds = toy();
        let spec = ModelSpec::from_table(0, 4, 8).unwrap();
        assert!(build_batch(&spec, &ds.stations, &[], None).is_err());
    }

    #[test]
    fn state_round_trip() {
        let ds = toy();
        let spec = ModelSpec::from_table(4, 4, 8).unwrap();
        let model = Model::new(&spec, crate::graph::NODE_FEATURE_DIM, 11);
        let snapshot = model.state();
        let mut other = Model::new(&spec, crate::graph::NODE_FEATURE_DIM, 999);
        other.load_state(&snapshot).unwrap();
        let graphs: Vec<&DailyGraph> = ds.graphs.iter().take(2).collect();
        let batch = batch_for(&spec, &ds, &graphs, 11);
        let a = model
            .forward(&batch, false, &mut stream(0, "eval"))
            .unwrap()
            .to_array();
        let b = other
            .forward(&batch, false, &mut stream(0, "eval"))
            .unwrap()
            .to_array();
        assert_eq!(a, b);
    }

    #[test]
    fn renormalized_mode_changes_the_operator_but_keeps_shapes() {
        let ds = toy();
        let mut spec = ModelSpec::from_table(1, 4, 8).unwrap();
        let model = Model::new(&spec, crate::graph::NODE_FEATURE_DIM, 2);
        let graphs: Vec<&DailyGraph> = ds.graphs.iter().take(2).collect();
        let plain = batch_for(&spec, &ds, &graphs, 2);
        spec.renormalized_adjacency = true;
        let mut renorm_model = Model::new(&spec, crate::graph::NODE_FEATURE_DIM, 2);
        renorm_model.load_state(&model.state()).unwrap();
        let renorm = batch_for(&spec, &ds, &graphs, 2);
        let a = model
            .forward(&plain, false, &mut stream(0, "eval"))
            .unwrap()
            .to_array();
        let b = renorm_model
            .forward(&renorm, false, &mut stream(0, "eval"))
            .unwrap()
            .to_array();
        assert_eq!(a.dim(), b.dim());
        assert!(a.iter().zip(b.iter()).any(|(x, y)| (x - y).abs() > 1e-9));
    }
}
