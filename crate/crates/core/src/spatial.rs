//! KNN graph over station coordinates, spectral clustering, and the
//! coarsening operator that pools embeddings and adjacency through a hard
//! cluster assignment.

use crate::error::{Error, Result};
use crate::linalg::{check_square, check_symmetric, sym_eigen};
use crate::rng;
use ndarray::{Array1, Array2};
use rand::Rng;

/// Binary symmetric KNN adjacency over planar coordinates.
#[derive(Debug, Clone)]
pub struct KnnGraph {
    pub k: usize,
    pub adjacency: Array2<f64>,
}

/// Hard one-hot assignment of nodes to `K` clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    matrix: Array2<f64>,
}

impl ClusterAssignment {
    /// Validates that every row is one-hot and no cluster is empty.
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        let k = matrix.ncols();
        let mut column_counts = vec![0usize; k];
        for (u, row) in matrix.rows().into_iter().enumerate() {
            let mut ones = 0;
            for (c, &x) in row.iter().enumerate() {
                if x == 1.0 {
                    ones += 1;
                    column_counts[c] += 1;
                } else if x != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "assignment row {u} has non-binary entry {x}"
                    )));
                }
            }
            if ones != 1 {
                return Err(Error::InvalidArgument(format!(
                    "assignment row {u} has {ones} ones, expected exactly 1"
                )));
            }
        }
        if let Some(c) = column_counts.iter().position(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!("cluster {c} is empty")));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_clusters(&self) -> usize {
        self.matrix.ncols()
    }

    /// Cluster label of each node.
    pub fn labels(&self) -> Vec<usize> {
        self.matrix
            .rows()
            .into_iter()
            .map(|row| row.iter().position(|&x| x == 1.0).unwrap())
            .collect()
    }

    /// Rows reordered by `perm[new] = old`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_nodes() {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let mut m = Array2::zeros(self.matrix.dim());
        for (new, &old) in perm.iter().enumerate() {
            m.row_mut(new).assign(&self.matrix.row(old));
        }
        Self::new(m)
    }
}

/// Result of pooling a graph through a cluster assignment.
#[derive(Debug, Clone)]
pub struct CoarsenedGraph {
    /// `S^T Z`: per-cluster sums of node embeddings, `K x l`.
    pub z_pool: Array2<f64>,
    /// `S^T A S`: inter-cluster edge mass, `K x K` symmetric.
    pub a_pool: Array2<f64>,
}

/// KNN graph under Euclidean distance, self excluded, symmetrized by OR.
///
/// Distance ties are broken by lower station index so the edge set is
/// deterministic even with duplicate coordinates.
pub fn knn_graph(coords: &Array2<f64>, k: usize) -> Result<KnnGraph> {
    let n = coords.nrows();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "k must satisfy 1 <= k < |V|, got k={k} with |V|={n}"
        )));
    }
    if coords.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("coordinates must be finite".into()));
    }
    let mut adjacency = Array2::<f64>::zeros((n, n));
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        for j in 0..n {
            if j == i {
                continue;
            }
            let dx = coords[[i, 0]] - coords[[j, 0]];
            let dy = coords[[i, 1]] - coords[[j, 1]];
            order.push((dx * dx + dy * dy, j));
        }
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, j) in order.iter().take(k) {
            adjacency[[i, j]] = 1.0;
            adjacency[[j, i]] = 1.0;
        }
    }
    Ok(KnnGraph { k, adjacency })
}

/// Unnormalized graph Laplacian `L = D - A`.
pub fn laplacian(adjacency: &Array2<f64>) -> Result<Array2<f64>> {
    let n = check_square(adjacency)?;
    check_symmetric(adjacency)?;
    let degrees = adjacency.sum_axis(ndarray::Axis(1));
    let mut l = adjacency.mapv(|x| -x);
    for i in 0..n {
        l[[i, i]] += degrees[i];
    }
    Ok(l)
}

/// Symmetric normalized Laplacian `D^{-1/2} L D^{-1/2}`.
///
/// Rows and columns of zero-degree nodes are all-zero under the same
/// convention as adjacency normalization.
pub fn sym_normalized_laplacian(l: &Array2<f64>, degrees: &Array1<f64>) -> Result<Array2<f64>> {
    let n = check_square(l)?;
    if degrees.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "degree vector length {} does not match matrix size {n}",
            degrees.len()
        )));
    }
    Ok(crate::graph::normalize_dense(l, degrees))
}

/// Eigenpairs ranked 2nd to (K+1)-th smallest of a symmetric matrix.
///
/// The single smallest eigenpair is skipped; the returned eigenvalues are in
/// ascending order and the eigenvector matrix is `|V| x K` with unit-norm
/// columns.
pub fn smallest_eigenpairs(matrix: &Array2<f64>, k: usize) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = check_square(matrix)?;
    if k + 1 > n {
        return Err(Error::InvalidArgument(format!(
            "need K + 1 <= |V|, got K={k} with |V|={n}"
        )));
    }
    let eig = sym_eigen(matrix)?;
    let values = eig.values.slice(ndarray::s![1..=k]).to_owned();
    let vectors = eig.vectors.slice(ndarray::s![.., 1..=k]).to_owned();
    Ok((values, vectors))
}

/// Lloyd's algorithm with k-means++ initialization and a fixed RNG seed.
///
/// Runs at most 300 iterations, stopping when assignments stabilize. An
/// empty cluster is repaired by reseeding its center at the point farthest
/// from it, taken from a cluster that still has at least two members.
pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k must satisfy 1 <= k <= |V|, got k={k} with |V|={n}"
        )));
    }
    let mut rng = rng::stream(seed, "kmeans");
    let mut centers = plus_plus_init(points, k, &mut rng);
    let mut labels = vec![usize::MAX; n];

    const MAX_ITERS: usize = 300;
    for _ in 0..MAX_ITERS {
        let mut new_labels: Vec<usize> = (0..n)
            .map(|u| nearest_center(points, &centers, u))
            .collect();
        repair_empty_clusters(points, &mut centers, &mut new_labels, k);
        let changed = new_labels != labels;
        labels = new_labels;
        if !changed {
            break;
        }
        update_centers(points, &labels, &mut centers, k);
    }
    Ok(labels)
}

fn plus_plus_init(
    points: &Array2<f64>,
    k: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<Array1<f64>> {
    let n = points.nrows();
    let mut centers: Vec<Array1<f64>> = Vec::with_capacity(k);
    centers.push(points.row(rng.random_range(0..n)).to_owned());
    let mut dist2 = vec![0.0f64; n];
    while centers.len() < k {
        let last = centers.last().unwrap();
        for u in 0..n {
            let d = sq_dist(points, u, last);
            if centers.len() == 1 || d < dist2[u] {
                dist2[u] = d;
            }
        }
        let total: f64 = dist2.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (u, &d) in dist2.iter().enumerate() {
                if target < d {
                    pick = u;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // all points coincide with the chosen centers
            rng.random_range(0..n)
        };
        centers.push(points.row(chosen).to_owned());
    }
    centers
}

fn sq_dist(points: &Array2<f64>, u: usize, center: &Array1<f64>) -> f64 {
    points
        .row(u)
        .iter()
        .zip(center.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn nearest_center(points: &Array2<f64>, centers: &[Array1<f64>], u: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(points, u, center);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn repair_empty_clusters(
    points: &Array2<f64>,
    centers: &mut [Array1<f64>],
    labels: &mut [usize],
    k: usize,
) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        // farthest point from the empty cluster's center, among points whose
        // own cluster keeps at least one member after the move
        let mut pick = None;
        let mut pick_d = -1.0;
        for u in 0..points.nrows() {
            if counts[labels[u]] < 2 {
                continue;
            }
            let d = sq_dist(points, u, &centers[empty]);
            if d > pick_d {
                pick_d = d;
                pick = Some(u);
            }
        }
        let u = pick.expect("a donor cluster with >= 2 members must exist");
        centers[empty] = points.row(u).to_owned();
        labels[u] = empty;
    }
}

fn update_centers(points: &Array2<f64>, labels: &[usize], centers: &mut [Array1<f64>], k: usize) {
    let d = points.ncols();
    let mut sums = vec![Array1::<f64>::zeros(d); k];
    let mut counts = vec![0usize; k];
    for (u, &l) in labels.iter().enumerate() {
        sums[l] += &points.row(u);
        counts[l] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            centers[c] = &sums[c] / counts[c] as f64;
        }
    }
}

/// One-hot assignment matrix from cluster labels.
pub fn assignment_matrix(labels: &[usize], k: usize) -> Result<ClusterAssignment> {
    let mut m = Array2::<f64>::zeros((labels.len(), k));
    for (u, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::IndexOutOfRange(format!(
                "label {l} of node {u} exceeds cluster count {k}"
            )));
        }
        m[[u, l]] = 1.0;
    }
    ClusterAssignment::new(m)
}

/// Normalized cut of a partition: `1/2 sum_k cut(A_k) / vol(A_k)`.
///
/// `cut` is the edge mass leaving the set, `vol` its total degree; a set
/// with zero volume contributes 0.
pub fn ncut(adjacency: &Array2<f64>, partition: &[Vec<usize>]) -> Result<f64> {
    let n = check_square(adjacency)?;
    check_symmetric(adjacency)?;
    let mut owner = vec![usize::MAX; n];
    for (c, set) in partition.iter().enumerate() {
        for &u in set {
            if u >= n {
                return Err(Error::IndexOutOfRange(format!("node {u} out of range")));
            }
            if owner[u] != usize::MAX {
                return Err(Error::InvalidArgument(format!(
                    "node {u} appears in more than one partition set"
                )));
            }
            owner[u] = c;
        }
    }
    if owner.iter().any(|&c| c == usize::MAX) {
        return Err(Error::InvalidArgument(
            "partition does not cover all nodes".into(),
        ));
    }
    let mut cut = vec![0.0f64; partition.len()];
    let mut vol = vec![0.0f64; partition.len()];
    for u in 0..n {
        for v in 0..n {
            let w = adjacency[[u, v]];
            vol[owner[u]] += w;
            if owner[u] != owner[v] {
                cut[owner[u]] += w;
            }
        }
    }
    let total: f64 = cut
        .iter()
        .zip(vol.iter())
        .map(|(&c, &v)| if v > 0.0 { c / v } else { 0.0 })
        .sum();
    Ok(0.5 * total)
}

/// Per-cluster cut / volume terms in cluster order (unhalved), plus sizes
/// and internal edge mass; used by the cluster inspection report.
pub struct ClusterCutStats {
    pub sizes: Vec<usize>,
    pub internal_weight: Vec<f64>,
    pub cut_over_vol: Vec<f64>,
}

pub fn cluster_cut_stats(
    adjacency: &Array2<f64>,
    assignment: &ClusterAssignment,
) -> Result<ClusterCutStats> {
    let n = check_square(adjacency)?;
    if n != assignment.n_nodes() {
        return Err(Error::DimensionMismatch(
            "assignment rows must match adjacency size".into(),
        ));
    }
    let labels = assignment.labels();
    let k = assignment.n_clusters();
    let mut sizes = vec![0usize; k];
    let mut internal = vec![0.0f64; k];
    let mut cut = vec![0.0f64; k];
    let mut vol = vec![0.0f64; k];
    for (u, &l) in labels.iter().enumerate() {
        sizes[l] += 1;
        for v in 0..n {
            let w = adjacency[[u, v]];
            vol[l] += w;
            if labels[v] == l {
                if v > u {
                    internal[l] += w;
                }
            } else {
                cut[l] += w;
            }
        }
    }
    let cut_over_vol = cut
        .iter()
        .zip(vol.iter())
        .map(|(&c, &v)| if v > 0.0 { c / v } else { 0.0 })
        .collect();
    Ok(ClusterCutStats {
        sizes,
        internal_weight: internal,
        cut_over_vol,
    })
}

/// Spectral clustering: seeded k-means on the rows of the eigenvector
/// matrix of the normalized Laplacian.
///
/// The embedding uses the K smallest eigenvectors including the first.
/// Keeping the first makes the rows of U cleanly separate connected
/// components (each component contributes one indicator eigenvector), which
/// dropping it would break on disconnected graphs.
pub fn spectral_clustering(
    adjacency: &Array2<f64>,
    k: usize,
    seed: u64,
) -> Result<ClusterAssignment> {
    let n = check_square(adjacency)?;
    if k + 1 > n {
        return Err(Error::InvalidArgument(format!(
            "need K + 1 <= |V|, got K={k} with |V|={n}"
        )));
    }
    let l = laplacian(adjacency)?;
    let degrees = adjacency.sum_axis(ndarray::Axis(1));
    let l_norm = sym_normalized_laplacian(&l, &degrees)?;
    let eig = sym_eigen(&l_norm)?;
    let embedding = eig.vectors.slice(ndarray::s![.., ..k]).to_owned();
    let labels = kmeans(&embedding, k, seed)?;
    assignment_matrix(&labels, k)
}

/// Pools node embeddings and adjacency through the assignment:
/// `z_pool = S^T Z`, `a_pool = S^T A S`.
pub fn coarsen(
    z: &Array2<f64>,
    adjacency: &Array2<f64>,
    assignment: &ClusterAssignment,
) -> Result<CoarsenedGraph> {
    let n = assignment.n_nodes();
    if z.nrows() != n || adjacency.nrows() != n || adjacency.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "assignment has {n} rows but Z is {}x{} and A is {}x{}",
            z.nrows(),
            z.ncols(),
            adjacency.nrows(),
            adjacency.ncols()
        )));
    }
    let s = assignment.matrix();
    let st = s.t();
    Ok(CoarsenedGraph {
        z_pool: st.dot(z),
        a_pool: st.dot(adjacency).dot(s),
    })
}
