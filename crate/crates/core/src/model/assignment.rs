//! Cluster-assignment preparation for the coarsened models.
//!
//! KNN-based models share one assignment computed up-front from station
//! coordinates; the daily-adjacency models recompute per day (memoized by
//! date). In both cases the pooled adjacency `S^T A~ S` is built from the
//! normalized adjacency of the graph the clusters came from.

use super::{Coarsening, ModelSpec};
use crate::error::Result;
use crate::graph::{self, AdjacencyMode, DailyGraph, StationSet};
use crate::rng::sub_seed;
use crate::spatial::{knn_graph, spectral_clustering, ClusterAssignment};
use chrono::NaiveDate;
use ndarray::Array2;
use rayon::prelude::*;
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

/// A prepared assignment: the hard cluster matrix and the pooled adjacency
/// used by the coarse-graph convolution.
#[derive(Debug, Clone)]
pub struct GraphAssignment {
    pub assignment: ClusterAssignment,
    pub pooled_adjacency: Array2<f64>,
}

impl GraphAssignment {
    /// Builds from an assignment and the normalized adjacency of the graph
    /// that produced it.
    pub fn new(assignment: ClusterAssignment, normalized_adjacency: &Array2<f64>) -> Self {
        let s = assignment.matrix();
        let pooled_adjacency = s.t().dot(normalized_adjacency).dot(s);
        Self {
            assignment,
            pooled_adjacency,
        }
    }
}

fn knn_assignment(stations: &StationSet, k: usize, n_clusters: usize, seed: u64) -> Result<GraphAssignment> {
    let knn = knn_graph(stations.coords(), k)?;
    let assignment = spectral_clustering(&knn.adjacency, n_clusters, sub_seed(seed, "spectral"))?;
    let degrees = knn.adjacency.sum_axis(ndarray::Axis(1));
    let normalized = graph::normalize_dense(&knn.adjacency, &degrees);
    Ok(GraphAssignment::new(assignment, &normalized))
}

fn daily_assignment(
    stations: &StationSet,
    graph: &DailyGraph,
    n_clusters: usize,
    seed: u64,
) -> Result<GraphAssignment> {
    let adj = graph::build_adjacency(graph, stations.len(), AdjacencyMode::Unweighted)?;
    let assignment =
        spectral_clustering(adj.values(), n_clusters, sub_seed(seed, "spectral"))?;
    let deg = graph::degree_matrix(&adj);
    let normalized = graph::sym_normalize(&adj, &deg);
    Ok(GraphAssignment::new(assignment, &normalized))
}

/// The assignment a model uses for one graph: absent without coarsening,
/// shared across days for KNN coarsening, per-day otherwise.
pub fn prepare_assignment(
    spec: &ModelSpec,
    stations: &StationSet,
    graph: &DailyGraph,
    seed: u64,
) -> Result<Option<GraphAssignment>> {
    match spec.coarsening {
        Coarsening::None => Ok(None),
        Coarsening::Knn { k } => Ok(Some(knn_assignment(stations, k, spec.n_clusters, seed)?)),
        Coarsening::FromDailyAdjacency => Ok(Some(daily_assignment(
            stations,
            graph,
            spec.n_clusters,
            seed,
        )?)),
    }
}

/// Memoizing provider of per-graph assignments for a training run.
pub struct AssignmentProvider {
    coarsening: Coarsening,
    n_clusters: usize,
    seed: u64,
    shared: Option<Rc<GraphAssignment>>,
    per_day: RefCell<HashMap<NaiveDate, Rc<GraphAssignment>>>,
}

impl AssignmentProvider {
    /// Builds the provider; for KNN coarsening this computes the shared
    /// assignment immediately.
    pub fn new(spec: &ModelSpec, stations: &StationSet, seed: u64) -> Result<Self> {
        let shared = match spec.coarsening {
            Coarsening::Knn { k } => Some(Rc::new(knn_assignment(
                stations,
                k,
                spec.n_clusters,
                seed,
            )?)),
            _ => None,
        };
        Ok(Self {
            coarsening: spec.coarsening,
            n_clusters: spec.n_clusters,
            seed,
            shared,
            per_day: RefCell::new(HashMap::new()),
        })
    }

    /// The assignment for one graph, computing and memoizing if needed.
    pub fn for_graph(
        &self,
        stations: &StationSet,
        graph: &DailyGraph,
    ) -> Result<Option<Rc<GraphAssignment>>> {
        match self.coarsening {
            Coarsening::None => Ok(None),
            Coarsening::Knn { .. } => Ok(self.shared.clone()),
            Coarsening::FromDailyAdjacency => {
                if let Some(found) = self.per_day.borrow().get(&graph.date) {
                    return Ok(Some(Rc::clone(found)));
                }
                let built = Rc::new(daily_assignment(
                    stations,
                    graph,
                    self.n_clusters,
                    self.seed,
                )?);
                self.per_day
                    .borrow_mut()
                    .insert(graph.date, Rc::clone(&built));
                Ok(Some(built))
            }
        }
    }

    /// Fills the per-day memo for all graphs at once, in parallel. The
    /// spectral decompositions are seeded per day, so the fill order does
    /// not affect the result.
    pub fn precompute(&self, stations: &StationSet, graphs: &[DailyGraph]) -> Result<()> {
        if self.coarsening != Coarsening::FromDailyAdjacency {
            return Ok(());
        }
        let missing: Vec<&DailyGraph> = {
            let memo = self.per_day.borrow();
            graphs
                .iter()
                .filter(|g| !memo.contains_key(&g.date))
                .collect()
        };
        let (n_clusters, seed) = (self.n_clusters, self.seed);
        let built: Vec<(NaiveDate, GraphAssignment)> = missing
            .par_iter()
            .map(|g| daily_assignment(stations, g, n_clusters, seed).map(|a| (g.date, a)))
            .collect::<Result<_>>()?;
        let mut memo = self.per_day.borrow_mut();
        for (date, a) in built {
            memo.insert(date, Rc::new(a));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::model::ModelSpec;

    fn toy() -> crate::data::Dataset {
        generate_synthetic(16, 24, 42, 0.5).unwrap().0
    }

    #[test]
    fn model_0_has_no_assignment() {
        let ds = toy();
        let spec = ModelSpec::from_table(0, 4, 8).unwrap();
        let a = prepare_assignment(&spec, &ds.stations, &ds.graphs[0], 7).unwrap();
        assert!(a.is_none());
    }

    #[test]
    fn knn_assignments_are_shared_and_model_independent() {
        let ds = toy();
        let spec4 = ModelSpec::from_table(4, 4, 8).unwrap();
        let spec8 = ModelSpec::from_table(8, 4, 8).unwrap();
        let a4 = prepare_assignment(&spec4, &ds.stations, &ds.graphs[0], 7)
            .unwrap()
            .unwrap();
        let a8 = prepare_assignment(&spec8, &ds.stations, &ds.graphs[1], 7)
            .unwrap()
            .unwrap();
        assert_eq!(a4.assignment.matrix(), a8.assignment.matrix());
        assert_eq!(a4.pooled_adjacency, a8.pooled_adjacency);
    }

    #[test]
    fn daily_assignments_are_memoized_by_date() {
        let ds = toy();
        let spec = ModelSpec::from_table(3, 4, 8).unwrap();
        let provider = AssignmentProvider::new(&spec, &ds.stations, 7).unwrap();
        let a = provider.for_graph(&ds.stations, &ds.graphs[0]).unwrap().unwrap();
        let b = provider.for_graph(&ds.stations, &ds.graphs[0]).unwrap().unwrap();
        assert!(Rc::ptr_eq(&a, &b));
        // different days may differ; at minimum they are separate entries
        let c = provider.for_graph(&ds.stations, &ds.graphs[1]).unwrap().unwrap();
        assert!(!Rc::ptr_eq(&a, &c));
    }

    #[test]
    fn precompute_matches_on_demand() {
        let ds = toy();
        let spec = ModelSpec::from_table(3, 4, 8).unwrap();
        let eager = AssignmentProvider::new(&spec, &ds.stations, 7).unwrap();
        eager.precompute(&ds.stations, &ds.graphs).unwrap();
        let lazy = AssignmentProvider::new(&spec, &ds.stations, 7).unwrap();
        for g in &ds.graphs {
            let a = eager.for_graph(&ds.stations, g).unwrap().unwrap();
            let b = lazy.for_graph(&ds.stations, g).unwrap().unwrap();
            assert_eq!(a.assignment.matrix(), b.assignment.matrix());
            assert_eq!(a.pooled_adjacency, b.pooled_adjacency);
        }
    }

    #[test]
    fn pooled_adjacency_mass_matches_source() {
        let ds = toy();
        let spec = ModelSpec::from_table(4, 4, 8).unwrap();
        let a = prepare_assignment(&spec, &ds.stations, &ds.graphs[0], 7)
            .unwrap()
            .unwrap();
        let knn = crate::spatial::knn_graph(ds.stations.coords(), 5).unwrap();
        let degrees = knn.adjacency.sum_axis(ndarray::Axis(1));
        let normalized = crate::graph::normalize_dense(&knn.adjacency, &degrees);
        assert!((a.pooled_adjacency.sum() - normalized.sum()).abs() < 1e-9);
    }
}
