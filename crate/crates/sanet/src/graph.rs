//! Affinity graphs over a point set.
//!
//! Four constructions are available, matching the usual taxonomy of
//! spectral clustering:
//!
//! * **k-nearest-neighbor** (sparse): connect each point to its `k` nearest
//!   neighbors, symmetrized by union (default) or by mutual agreement.
//! * **ε-neighborhood** (sparse): connect every pair within `ε = multiple · η`,
//!   where `η` is the longest edge of the Euclidean minimum spanning tree.
//!   Using `η` as the unit guarantees that `multiple ≥ 1` yields a connected
//!   graph.
//! * **Gaussian** (dense): `w_ij = exp(−‖x_i − x_j‖² / (2σ²))`.
//! * **Self-tuning** (dense): `w_ij = exp(−‖x_i − x_j‖² / (σ_i σ_j))` with
//!   `σ_i` the distance from `x_i` to its `k_local`-th neighbor.
//!
//! Sparse edges default to weight 1. Every graph has a zero diagonal and is
//! exactly symmetric. Neighbor ties are broken toward the smaller index.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::distance::PointCloud;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub const DEFAULT_K_LOCAL: usize = 7;

fn default_k_local() -> usize {
    DEFAULT_K_LOCAL
}

/// Weight carried by the edges of a sparse graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EdgeWeights {
    #[default]
    Binary,
    Gaussian { sigma: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetrization {
    /// Edge if either endpoint lists the other.
    #[default]
    Union,
    /// Edge only if both endpoints list each other.
    Mutual,
}

/// Graph construction and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AffinityScheme {
    Knn {
        k: usize,
        #[serde(default)]
        symmetrize: Symmetrization,
        #[serde(default)]
        weights: EdgeWeights,
    },
    Epsilon {
        /// Radius as a multiple of the longest MST edge.
        multiple: f64,
        #[serde(default)]
        weights: EdgeWeights,
    },
    Gaussian {
        sigma: f64,
    },
    SelfTuning {
        #[serde(default = "default_k_local")]
        k_local: usize,
        /// Measure local scales to distinct points only, so exact duplicates
        /// do not collapse a scale to zero.
        #[serde(default)]
        merge_duplicates: bool,
    },
}

impl AffinityScheme {
    pub fn knn(k: usize) -> Self {
        AffinityScheme::Knn {
            k,
            symmetrize: Symmetrization::Union,
            weights: EdgeWeights::Binary,
        }
    }

    pub fn epsilon(multiple: f64) -> Self {
        AffinityScheme::Epsilon {
            multiple,
            weights: EdgeWeights::Binary,
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        AffinityScheme::Gaussian { sigma }
    }

    pub fn self_tuning(k_local: usize) -> Self {
        AffinityScheme::SelfTuning {
            k_local,
            merge_duplicates: false,
        }
    }

    /// Whether the construction produces a dense matrix.
    pub fn is_dense(&self) -> bool {
        matches!(
            self,
            AffinityScheme::Gaussian { .. } | AffinityScheme::SelfTuning { .. }
        )
    }

    /// Checks parameter ranges that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let check_weights = |w: &EdgeWeights| match w {
            EdgeWeights::Gaussian { sigma } if !(*sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::Config(format!("edge weight sigma {sigma} must be positive")))
            }
            _ => Ok(()),
        };
        match self {
            AffinityScheme::Knn { k, weights, .. } => {
                if *k == 0 {
                    return Err(Error::Config("knn k must be at least 1".into()));
                }
                check_weights(weights)
            }
            AffinityScheme::Epsilon { multiple, weights } => {
                if !(*multiple > 0.0 && multiple.is_finite()) {
                    return Err(Error::Config(format!(
                        "epsilon multiple {multiple} must be positive"
                    )));
                }
                check_weights(weights)
            }
            AffinityScheme::Gaussian { sigma } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::Config(format!("gaussian sigma {sigma} must be positive")));
                }
                Ok(())
            }
            AffinityScheme::SelfTuning { k_local, .. } => {
                if *k_local == 0 {
                    return Err(Error::Config("self-tuning k_local must be at least 1".into()));
                }
                Ok(())
            }
        }
    }

    /// Neighbor-table length this scheme reads, if any.
    pub fn neighbors_needed(&self) -> Option<usize> {
        match self {
            AffinityScheme::Knn { k, .. } => Some(*k),
            AffinityScheme::SelfTuning { k_local, .. } => Some(*k_local),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            AffinityScheme::Knn { k, .. } => format!("knn(k={k})"),
            AffinityScheme::Epsilon { multiple, .. } => format!("epsilon({multiple}η)"),
            AffinityScheme::Gaussian { sigma } => format!("gaussian(σ={sigma})"),
            AffinityScheme::SelfTuning { k_local, .. } => format!("self_tuning(k={k_local})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GraphStorage {
    Sparse(CsrMatrix),
    Dense(Array2<f64>),
}

/// Symmetric nonnegative weight matrix with zero diagonal, plus its degrees.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityGraph {
    weights: GraphStorage,
    degrees: Vec<f64>,
}

impl AffinityGraph {
    pub fn from_sparse(w: CsrMatrix) -> Result<Self> {
        let degrees = w.row_sums();
        let g = AffinityGraph {
            weights: GraphStorage::Sparse(w),
            degrees,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn from_dense(w: Array2<f64>) -> Result<Self> {
        let degrees = w.sum_axis(Axis(1)).to_vec();
        let g = AffinityGraph {
            weights: GraphStorage::Dense(w),
            degrees,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn storage(&self) -> &GraphStorage {
        &self.weights
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.weights, GraphStorage::Sparse(_))
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        match &self.weights {
            GraphStorage::Sparse(m) => m.get(i, j),
            GraphStorage::Dense(m) => m[[i, j]],
        }
    }

    /// Number of undirected edges with positive weight.
    pub fn edge_count(&self) -> usize {
        match &self.weights {
            GraphStorage::Sparse(m) => (0..m.n())
                .map(|i| m.row(i).filter(|&(j, v)| j > i && v > 0.0).count())
                .sum(),
            GraphStorage::Dense(m) => {
                let n = m.nrows();
                (0..n)
                    .map(|i| (i + 1..n).filter(|&j| m[[i, j]] > 0.0).count())
                    .sum()
            }
        }
    }

    /// Undirected edges `(i, j)` with `i < j` and positive weight.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            match &self.weights {
                GraphStorage::Sparse(m) => {
                    out.extend(m.row(i).filter(|&(j, v)| j > i && v > 0.0).map(|(j, v)| (i, j, v)))
                }
                GraphStorage::Dense(m) => out.extend(
                    (i + 1..n)
                        .filter(|&j| m[[i, j]] > 0.0)
                        .map(|j| (i, j, m[[i, j]])),
                ),
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match &self.weights {
            GraphStorage::Sparse(m) => m.to_dense(),
            GraphStorage::Dense(m) => m.clone(),
        }
    }

    /// Checks symmetry, nonnegativity, zero diagonal and degree consistency.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let dense_view;
        let (sym, nonneg, diag) = match &self.weights {
            GraphStorage::Sparse(m) => (
                m.is_symmetric(),
                (0..n).all(|i| m.row(i).all(|(_, v)| v >= 0.0 && v.is_finite())),
                (0..n).all(|i| m.get(i, i) == 0.0),
            ),
            GraphStorage::Dense(m) => {
                dense_view = m;
                (
                    (0..n).all(|i| (0..i).all(|j| dense_view[[i, j]] == dense_view[[j, i]])),
                    m.iter().all(|&v| v >= 0.0 && v.is_finite()),
                    (0..n).all(|i| m[[i, i]] == 0.0),
                )
            }
        };
        if !sym {
            return Err(Error::Contract("affinity matrix is not symmetric".into()));
        }
        if !nonneg {
            return Err(Error::Contract("affinity matrix has negative or non-finite weights".into()));
        }
        if !diag {
            return Err(Error::Contract("affinity matrix has a nonzero diagonal".into()));
        }
        Ok(())
    }

    /// Writes the graph as `i j w` lines, one per undirected edge.
    pub fn write_edge_list(&self, mut out: impl Write) -> std::io::Result<()> {
        for (i, j, w) in self.edges() {
            writeln!(out, "{i} {j} {w}")?;
        }
        Ok(())
    }
}

/// Resource limits applied while building graphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphLimits {
    /// Maximum number of undirected edges in a sparse graph.
    pub max_edges: usize,
}

impl Default for GraphLimits {
    fn default() -> Self {
        GraphLimits {
            max_edges: usize::MAX,
        }
    }
}

fn edge_weight(weights: &EdgeWeights, sq_dist: f64) -> f64 {
    match weights {
        EdgeWeights::Binary => 1.0,
        EdgeWeights::Gaussian { sigma } => (-sq_dist / (2.0 * sigma * sigma)).exp(),
    }
}

fn symmetric_from_edges(n: usize, edges: Vec<(usize, usize, f64)>) -> Result<AffinityGraph> {
    let mut triplets = Vec::with_capacity(edges.len() * 2);
    for (i, j, w) in edges {
        triplets.push((i, j, w));
        triplets.push((j, i, w));
    }
    AffinityGraph::from_sparse(CsrMatrix::from_triplets(n, triplets))
}

/// Builds the graph for `scheme` over a prepared point cloud.
pub fn build_affinity(
    cloud: &PointCloud<'_>,
    scheme: &AffinityScheme,
    limits: GraphLimits,
) -> Result<AffinityGraph> {
    scheme.validate()?;
    let n = cloud.len();
    match scheme {
        AffinityScheme::Knn {
            k,
            symmetrize,
            weights,
        } => {
            if *k >= n {
                return Err(Error::Config(format!("knn k = {k} must be below n = {n}")));
            }
            let table = cloud.neighbors(*k)?;
            let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(n * k);
            for i in 0..n {
                for (j, d2) in table.neighbors_of(i).take(*k) {
                    let keep = match symmetrize {
                        Symmetrization::Union => true,
                        Symmetrization::Mutual => table.neighbors_of(j).take(*k).any(|(x, _)| x == i),
                    };
                    if keep {
                        edges.push((i.min(j), i.max(j), edge_weight(weights, d2)));
                    }
                }
            }
            edges.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
            edges.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
            if edges.len() > limits.max_edges {
                return Err(Error::Guardrail(format!(
                    "{} has {} edges, above the limit of {}",
                    scheme.label(),
                    edges.len(),
                    limits.max_edges
                )));
            }
            symmetric_from_edges(n, edges)
        }
        AffinityScheme::Epsilon { multiple, weights } => {
            let eta_sq = cloud.mst_longest_sq()?;
            let radius_sq = multiple * multiple * eta_sq;
            let lo = radius_sq * (1.0 - 1e-7);
            let hi = radius_sq * (1.0 + 1e-7);
            let mut edges = Vec::new();
            let mut overflow = false;
            cloud.for_each_block(|start, block| {
                if overflow {
                    return;
                }
                for (r, row) in block.axis_iter(Axis(0)).enumerate() {
                    let i = start + r;
                    for j in i + 1..n {
                        let mut d2 = row[j];
                        if d2 > hi {
                            continue;
                        }
                        if d2 >= lo {
                            d2 = cloud.exact(i, j);
                            if d2 > radius_sq {
                                continue;
                            }
                        }
                        edges.push((i, j, edge_weight(weights, d2)));
                    }
                    if edges.len() > limits.max_edges {
                        overflow = true;
                        return;
                    }
                }
            });
            if overflow {
                return Err(Error::Guardrail(format!(
                    "{} exceeds the limit of {} edges",
                    scheme.label(),
                    limits.max_edges
                )));
            }
            symmetric_from_edges(n, edges)
        }
        AffinityScheme::Gaussian { sigma } => {
            let denom = 2.0 * sigma * sigma;
            dense_from_distances(cloud, |_, _, d2| (-d2 / denom).exp())
        }
        AffinityScheme::SelfTuning {
            k_local,
            merge_duplicates,
        } => {
            let scales = local_scales(cloud, *k_local, *merge_duplicates)?;
            dense_from_distances(cloud, |i, j, d2| (-d2 / (scales[i] * scales[j])).exp())
        }
    }
}

/// Per-point scale `σ_i`: distance to the `k_local`-th neighbor (or the
/// `k_local`-th distinct neighbor with `merge_duplicates`).
pub fn local_scales(cloud: &PointCloud<'_>, k_local: usize, merge_duplicates: bool) -> Result<Vec<f64>> {
    let n = cloud.len();
    if k_local == 0 || k_local >= n {
        return Err(Error::Config(format!(
            "self-tuning k_local = {k_local} must satisfy 1 <= k_local < n = {n}"
        )));
    }
    let table = cloud.neighbors(k_local)?;
    (0..n)
        .map(|i| {
            let d2 = if merge_duplicates {
                table.kth_distinct_sq_dist(i, k_local).unwrap_or(0.0)
            } else {
                table.kth_sq_dist(i, k_local)
            };
            if d2 > 0.0 {
                Ok(d2.sqrt())
            } else {
                Err(Error::DegenerateScale { index: i, k_local })
            }
        })
        .collect()
}

fn dense_from_distances(
    cloud: &PointCloud<'_>,
    weight: impl Fn(usize, usize, f64) -> f64,
) -> Result<AffinityGraph> {
    let n = cloud.len();
    let mut w = Array2::<f64>::zeros((n, n));
    cloud.for_each_block(|start, block| {
        for (r, row) in block.axis_iter(Axis(0)).enumerate() {
            let i = start + r;
            for j in i + 1..n {
                w[[i, j]] = weight(i, j, row[j]);
            }
        }
    });
    for i in 0..n {
        for j in 0..i {
            w[[i, j]] = w[[j, i]];
        }
    }
    AffinityGraph::from_dense(w)
}

/// k-nearest-neighbor graph with union symmetrization and unit weights.
pub fn knn_affinity(points: ArrayView2<'_, f64>, k: usize) -> Result<AffinityGraph> {
    build_affinity(&PointCloud::new(points), &AffinityScheme::knn(k), GraphLimits::default())
}

/// Length of the longest edge of a Euclidean minimum spanning tree.
pub fn mst_longest_edge(points: ArrayView2<'_, f64>) -> Result<f64> {
    Ok(PointCloud::new(points).mst_longest_sq()?.sqrt())
}

/// ε-neighborhood graph with `ε = multiple · η` and unit weights.
pub fn epsilon_affinity(points: ArrayView2<'_, f64>, multiple: f64) -> Result<AffinityGraph> {
    build_affinity(
        &PointCloud::new(points),
        &AffinityScheme::epsilon(multiple),
        GraphLimits::default(),
    )
}

/// Dense Gaussian graph `exp(−d² / (2σ²))`.
pub fn gaussian_affinity(points: ArrayView2<'_, f64>, sigma: f64) -> Result<AffinityGraph> {
    build_affinity(&PointCloud::new(points), &AffinityScheme::gaussian(sigma), GraphLimits::default())
}

/// Dense self-tuning graph `exp(−d² / (σ_i σ_j))`.
pub fn self_tuning_affinity(points: ArrayView2<'_, f64>, k_local: usize) -> Result<AffinityGraph> {
    build_affinity(
        &PointCloud::new(points),
        &AffinityScheme::self_tuning(k_local),
        GraphLimits::default(),
    )
}
