//! Graph containers and adjacency machinery shared by every downstream module.

use crate::error::{Error, Result};
use crate::linalg::{check_square, check_symmetric};
use chrono::NaiveDate;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// Number of one-hot land-use columns in the node feature matrix.
pub const LANDUSE_DIM: usize = 6;
/// Number of household-count columns in the node feature matrix.
pub const HOUSEHOLD_DIM: usize = 10;
/// Total node feature width.
pub const NODE_FEATURE_DIM: usize = LANDUSE_DIM + HOUSEHOLD_DIM;
/// Number of target classes (3 weathers x weekday/weekend).
pub const N_CLASSES: usize = 6;

/// The fixed universe of stations: ids, planar coordinates, node features.
///
/// Every daily graph is materialized over this full set; stations unused on
/// a given day become isolated zero-degree nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationSet {
    station_ids: Vec<String>,
    coords: Array2<f64>,
    node_features: Array2<f64>,
}

impl StationSet {
    /// Validates id uniqueness, shape agreement, feature finiteness, and that
    /// the land-use block of every row is exactly one-hot.
    pub fn new(
        station_ids: Vec<String>,
        coords: Array2<f64>,
        node_features: Array2<f64>,
    ) -> Result<Self> {
        let n = station_ids.len();
        let mut seen = HashSet::new();
        for id in &station_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate station id {id:?}"
                )));
            }
        }
        if coords.nrows() != n || node_features.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} station ids but {} coordinate rows and {} feature rows",
                coords.nrows(),
                node_features.nrows()
            )));
        }
        if coords.ncols() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "coordinates must be |V|x2, got {} columns",
                coords.ncols()
            )));
        }
        if node_features.ncols() != NODE_FEATURE_DIM {
            return Err(Error::DimensionMismatch(format!(
                "node features must be |V|x{NODE_FEATURE_DIM}, got {} columns",
                node_features.ncols()
            )));
        }
        if coords.iter().any(|x| !x.is_finite()) || node_features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "coordinates and node features must be finite".into(),
            ));
        }
        for (u, row) in node_features.rows().into_iter().enumerate() {
            let landuse = row.slice(ndarray::s![..LANDUSE_DIM]);
            let ones = landuse.iter().filter(|&&x| x == 1.0).count();
            let zeros = landuse.iter().filter(|&&x| x == 0.0).count();
            if ones != 1 || zeros != LANDUSE_DIM - 1 {
                return Err(Error::InvalidArgument(format!(
                    "land-use block of station {u} is not one-hot"
                )));
            }
        }
        Ok(Self {
            station_ids,
            coords,
            node_features,
        })
    }

    pub fn len(&self) -> usize {
        self.station_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.station_ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.station_ids
    }

    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    pub fn node_features(&self) -> &Array2<f64> {
        &self.node_features
    }

    /// Index of a station id, if present.
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.station_ids.iter().position(|s| s == id)
    }

    /// Replaces the feature matrix, revalidating the invariants.
    pub fn with_node_features(&self, node_features: Array2<f64>) -> Result<Self> {
        Self::new(self.station_ids.clone(), self.coords.clone(), node_features)
    }

    /// Reorders stations by the given permutation (`perm[new] = old`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let ids = perm.iter().map(|&o| self.station_ids[o].clone()).collect();
        let mut coords = Array2::zeros(self.coords.dim());
        let mut feats = Array2::zeros(self.node_features.dim());
        for (new, &old) in perm.iter().enumerate() {
            coords.row_mut(new).assign(&self.coords.row(old));
            feats.row_mut(new).assign(&self.node_features.row(old));
        }
        Self::new(ids, coords, feats)
    }
}

/// One undirected weighted edge: trip count between stations `i <= j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub count: u32,
}

/// One day's travel graph: edge list, temperature features, target class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DailyGraph {
    pub date: NaiveDate,
    pub edges: Vec<Edge>,
    pub graph_features: [f64; 3],
    pub label: usize,
}

impl DailyGraph {
    /// Validates edge-key normalization (`i <= j`, no duplicates, count >= 1),
    /// feature finiteness, and label range.
    pub fn new(
        date: NaiveDate,
        edges: Vec<Edge>,
        graph_features: [f64; 3],
        label: usize,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &edges {
            if e.i > e.j {
                return Err(Error::InvalidArgument(format!(
                    "edge ({}, {}) is not normalized to i <= j",
                    e.i, e.j
                )));
            }
            if e.count == 0 {
                return Err(Error::InvalidArgument(format!(
                    "edge ({}, {}) has zero count",
                    e.i, e.j
                )));
            }
            if !seen.insert((e.i, e.j)) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate edge ({}, {})",
                    e.i, e.j
                )));
            }
        }
        if graph_features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("graph features must be finite".into()));
        }
        if label >= N_CLASSES {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range 0..{N_CLASSES}"
            )));
        }
        Ok(Self {
            date,
            edges,
            graph_features,
            label,
        })
    }

    /// Total trip records carried by this graph, self-records included.
    pub fn total_trips(&self) -> u64 {
        self.edges.iter().map(|e| u64::from(e.count)).sum()
    }
}

/// Whether adjacency entries carry trip counts or just edge indicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdjacencyMode {
    Unweighted,
    Weighted,
}

/// Symmetric non-negative adjacency with zero diagonal.
#[derive(Debug, Clone)]
pub struct AdjacencyMatrix {
    values: Array2<f64>,
    mode: AdjacencyMode,
}

impl AdjacencyMatrix {
    /// Wraps a raw matrix, validating symmetry, non-negativity, zero diagonal,
    /// and (in unweighted mode) 0/1 entries.
    pub fn from_dense(values: Array2<f64>, mode: AdjacencyMode) -> Result<Self> {
        let n = check_square(&values)?;
        check_symmetric(&values)?;
        for i in 0..n {
            if values[[i, i]] != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "adjacency diagonal must be zero (node {i})"
                )));
            }
        }
        for &x in values.iter() {
            if !(x >= 0.0) || !x.is_finite() {
                return Err(Error::InvalidArgument(
                    "adjacency entries must be finite and non-negative".into(),
                ));
            }
            if mode == AdjacencyMode::Unweighted && x != 0.0 && x != 1.0 {
                return Err(Error::InvalidArgument(
                    "unweighted adjacency entries must be 0 or 1".into(),
                ));
            }
        }
        Ok(Self { values, mode })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mode(&self) -> AdjacencyMode {
        self.mode
    }

    pub fn n_nodes(&self) -> usize {
        self.values.nrows()
    }
}

/// Diagonal of a degree matrix: `diagonal[i]` is the row sum of the adjacency
/// it was derived from.
#[derive(Debug, Clone)]
pub struct DegreeMatrix {
    diagonal: Array1<f64>,
}

impl DegreeMatrix {
    pub fn diagonal(&self) -> &Array1<f64> {
        &self.diagonal
    }
}

/// Materializes a day's adjacency over the full station universe.
///
/// Weighted mode stores `n_ij`; unweighted mode stores 1 wherever at least
/// one trip was recorded. Same-station records contribute to no off-diagonal
/// entry and are dropped here; self-influence enters message passing through
/// the identity term instead.
pub fn build_adjacency(
    graph: &DailyGraph,
    n_nodes: usize,
    mode: AdjacencyMode,
) -> Result<AdjacencyMatrix> {
    let mut values = Array2::<f64>::zeros((n_nodes, n_nodes));
    for e in &graph.edges {
        if e.i >= n_nodes || e.j >= n_nodes {
            return Err(Error::IndexOutOfRange(format!(
                "edge ({}, {}) exceeds node count {n_nodes}",
                e.i, e.j
            )));
        }
        if e.i == e.j {
            continue;
        }
        let w = match mode {
            AdjacencyMode::Weighted => f64::from(e.count),
            AdjacencyMode::Unweighted => 1.0,
        };
        values[[e.i, e.j]] = w;
        values[[e.j, e.i]] = w;
    }
    Ok(AdjacencyMatrix { values, mode })
}

/// Degree matrix of a (symmetric) adjacency: `d_i = sum_j A[i][j]`.
pub fn degree_matrix(adjacency: &AdjacencyMatrix) -> DegreeMatrix {
    DegreeMatrix {
        diagonal: adjacency.values.sum_axis(ndarray::Axis(1)),
    }
}

/// Symmetric normalization `D^{-1/2} A D^{-1/2}`.
///
/// Zero-degree nodes use the convention `0^{-1/2} = 0`, so their rows and
/// columns come out all-zero; such nodes still self-update through the
/// identity term of the GCN layer.
pub fn sym_normalize(adjacency: &AdjacencyMatrix, degrees: &DegreeMatrix) -> Array2<f64> {
    normalize_dense(&adjacency.values, degrees.diagonal())
}

/// `D^{-1/2} M D^{-1/2}` for a raw matrix and degree diagonal, with the
/// zero-degree-maps-to-zero convention.
pub fn normalize_dense(matrix: &Array2<f64>, degrees: &Array1<f64>) -> Array2<f64> {
    let inv_sqrt: Array1<f64> = degrees.mapv(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 });
    let mut out = matrix.clone();
    for ((i, j), x) in out.indexed_iter_mut() {
        *x *= inv_sqrt[i] * inv_sqrt[j];
    }
    out
}

/// Convenience: normalized adjacency of a daily graph in the given mode.
pub fn normalized_daily_adjacency(
    graph: &DailyGraph,
    n_nodes: usize,
    mode: AdjacencyMode,
) -> Result<Array2<f64>> {
    let adj = build_adjacency(graph, n_nodes, mode)?;
    let deg = degree_matrix(&adj);
    Ok(sym_normalize(&adj, &deg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 4, 29).unwrap()
    }

    fn daily(edges: Vec<(usize, usize, u32)>) -> DailyGraph {
        let edges = edges
            .into_iter()
            .map(|(i, j, count)| Edge { i, j, count })
            .collect();
        DailyGraph::new(date(), edges, [0.0, 0.0, 0.0], 0).unwrap()
    }

    #[test]
    fn weighted_adjacency_from_single_edge() {
        let a = build_adjacency(&daily(vec![(0, 1, 3)]), 2, AdjacencyMode::Weighted).unwrap();
        assert_eq!(a.values(), &array![[0.0, 3.0], [3.0, 0.0]]);
    }

    #[test]
    fn unweighted_adjacency_thresholds_counts() {
        let a = build_adjacency(&daily(vec![(0, 1, 3)]), 2, AdjacencyMode::Unweighted).unwrap();
        assert_eq!(a.values(), &array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn self_records_are_dropped_from_adjacency() {
        let a = build_adjacency(
            &daily(vec![(0, 0, 5), (0, 1, 2)]),
            3,
            AdjacencyMode::Weighted,
        )
        .unwrap();
        assert_eq!(
            a.values(),
            &array![[0.0, 2.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
        );
    }

    #[test]
    fn out_of_range_endpoint_is_an_input_error() {
        let err = build_adjacency(&daily(vec![(0, 5, 1)]), 3, AdjacencyMode::Weighted);
        assert!(matches!(err, Err(Error::IndexOutOfRange(_))));
    }

    #[test]
    fn degree_of_single_edge_graph() {
        let a = build_adjacency(&daily(vec![(0, 1, 1)]), 2, AdjacencyMode::Unweighted).unwrap();
        assert_eq!(degree_matrix(&a).diagonal(), &array![1.0, 1.0]);
    }

    #[test]
    fn weighted_degree() {
        let a = build_adjacency(&daily(vec![(0, 1, 3)]), 2, AdjacencyMode::Weighted).unwrap();
        assert_eq!(degree_matrix(&a).diagonal(), &array![3.0, 3.0]);
    }

    #[test]
    fn triangle_degrees_are_row_sums() {
        let a = build_adjacency(
            &daily(vec![(0, 1, 1), (0, 2, 1), (1, 2, 1)]),
            3,
            AdjacencyMode::Unweighted,
        )
        .unwrap();
        assert_eq!(degree_matrix(&a).diagonal(), &array![2.0, 2.0, 2.0]);
    }

    #[test]
    fn path_graph_normalization() {
        // path 0-1-2: degrees (1, 2, 1), so the normalized off-diagonals are 1/sqrt(2)
        let a = build_adjacency(
            &daily(vec![(0, 1, 1), (1, 2, 1)]),
            3,
            AdjacencyMode::Unweighted,
        )
        .unwrap();
        let norm = sym_normalize(&a, &degree_matrix(&a));
        let r = 1.0 / 2.0_f64.sqrt();
        assert_abs_diff_eq!(norm[[0, 1]], r, epsilon = 1e-12);
        assert_abs_diff_eq!(norm[[1, 2]], r, epsilon = 1e-12);
        assert_abs_diff_eq!(norm[[0, 2]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(norm[[0, 0]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn k2_is_fixed_by_normalization() {
        let a = build_adjacency(&daily(vec![(0, 1, 1)]), 2, AdjacencyMode::Unweighted).unwrap();
        let norm = sym_normalize(&a, &degree_matrix(&a));
        assert_eq!(norm, array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn isolated_node_rows_stay_zero() {
        let a = build_adjacency(&daily(vec![(0, 1, 4)]), 3, AdjacencyMode::Weighted).unwrap();
        let norm = sym_normalize(&a, &degree_matrix(&a));
        for k in 0..3 {
            assert_eq!(norm[[2, k]], 0.0);
            assert_eq!(norm[[k, 2]], 0.0);
        }
    }

    #[test]
    fn station_set_rejects_duplicates_and_bad_one_hot() {
        let coords = array![[0.0, 0.0], [1.0, 1.0]];
        let mut feats = Array2::<f64>::zeros((2, NODE_FEATURE_DIM));
        feats[[0, 0]] = 1.0;
        feats[[1, 1]] = 1.0;
        let ok = StationSet::new(vec!["a".into(), "b".into()], coords.clone(), feats.clone());
        assert!(ok.is_ok());
        let dup = StationSet::new(vec!["a".into(), "a".into()], coords.clone(), feats.clone());
        assert!(dup.is_err());
        feats[[1, 2]] = 1.0; // two ones in the land-use block
        let bad = StationSet::new(vec!["a".into(), "b".into()], coords, feats);
        assert!(bad.is_err());
    }

    #[test]
    fn daily_graph_rejects_duplicates_and_bad_labels() {
        let e = vec![Edge { i: 0, j: 1, count: 1 }, Edge { i: 0, j: 1, count: 2 }];
        assert!(DailyGraph::new(date(), e, [0.0; 3], 0).is_err());
        let e = vec![Edge { i: 1, j: 0, count: 1 }];
        assert!(DailyGraph::new(date(), e, [0.0; 3], 0).is_err());
        assert!(DailyGraph::new(date(), vec![], [0.0; 3], 6).is_err());
    }

    proptest! {
        #[test]
        fn normalization_preserves_symmetry(edges in proptest::collection::vec((0usize..8, 0usize..8, 1u32..20), 0..24)) {
            let mut seen = std::collections::HashSet::new();
            let edges: Vec<Edge> = edges
                .into_iter()
                .map(|(a, b, count)| Edge { i: a.min(b), j: a.max(b), count })
                .filter(|e| seen.insert((e.i, e.j)))
                .collect();
            let g = DailyGraph::new(date(), edges, [0.0; 3], 0).unwrap();
            let a = build_adjacency(&g, 8, AdjacencyMode::Weighted).unwrap();
            let norm = sym_normalize(&a, &degree_matrix(&a));
            for i in 0..8 {
                for j in 0..8 {
                    prop_assert_eq!(norm[[i, j]], norm[[j, i]]);
                }
            }
        }

        #[test]
        fn weighted_thresholded_equals_unweighted(edges in proptest::collection::vec((0usize..8, 0usize..8, 1u32..20), 0..24)) {
            let mut seen = std::collections::HashSet::new();
            let edges: Vec<Edge> = edges
                .into_iter()
                .map(|(a, b, count)| Edge { i: a.min(b), j: a.max(b), count })
                .filter(|e| seen.insert((e.i, e.j)))
                .collect();
            let g = DailyGraph::new(date(), edges, [0.0; 3], 0).unwrap();
            let w = build_adjacency(&g, 8, AdjacencyMode::Weighted).unwrap();
            let u = build_adjacency(&g, 8, AdjacencyMode::Unweighted).unwrap();
            let thresholded = w.values().mapv(|x| if x >= 1.0 { 1.0 } else { 0.0 });
            prop_assert_eq!(&thresholded, u.values());
        }

        #[test]
        fn degree_sum_is_twice_edge_mass(edges in proptest::collection::vec((0usize..8, 0usize..8, 1u32..20), 0..24)) {
            let mut seen = std::collections::HashSet::new();
            let edges: Vec<Edge> = edges
                .into_iter()
                .map(|(a, b, count)| Edge { i: a.min(b), j: a.max(b), count })
                .filter(|e| seen.insert((e.i, e.j)))
                .collect();
            let g = DailyGraph::new(date(), edges, [0.0; 3], 0).unwrap();
            let a = build_adjacency(&g, 8, AdjacencyMode::Weighted).unwrap();
            let deg_sum: f64 = degree_matrix(&a).diagonal().sum();
            let mut edge_mass = 0.0;
            for i in 0..8 {
                for j in (i + 1)..8 {
                    edge_mass += a.values()[[i, j]];
                }
            }
            prop_assert!((deg_sum - 2.0 * edge_mass).abs() < 1e-9);
        }
    }
}
