//! Graph Laplacians: `L = D − W`, `L_sym = I − D^{-1/2} W D^{-1/2}` and
//! `L_rw = I − D^{-1} W`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AffinityGraph, GraphStorage};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    Unnormalized,
    #[default]
    Symmetric,
    /// Left normalized, `D^{-1} L`.
    RandomWalk,
}

impl LaplacianKind {
    pub fn is_normalized(self) -> bool {
        self != LaplacianKind::Unnormalized
    }
}

/// What to do with vertices whose degree is zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsolatedPolicy {
    Error,
    /// Normalize as if the degree were 1; the vertex's row of `W` stays zero.
    #[default]
    UnitDegree,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianMatrix {
    matrix: GraphStorage,
    kind: LaplacianKind,
    /// Degrees used for normalization (after the isolated-vertex policy).
    degrees: Vec<f64>,
}

impl LaplacianMatrix {
    pub fn kind(&self) -> LaplacianKind {
        self.kind
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    pub fn storage(&self) -> &GraphStorage {
        &self.matrix
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match &self.matrix {
            GraphStorage::Sparse(m) => m.to_dense(),
            GraphStorage::Dense(m) => m.clone(),
        }
    }
}

/// Forms the Laplacian of `graph`.
pub fn build_laplacian(
    graph: &AffinityGraph,
    kind: LaplacianKind,
    policy: IsolatedPolicy,
) -> Result<LaplacianMatrix> {
    let isolated: Vec<usize> = graph
        .degrees()
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0.0)
        .map(|(i, _)| i)
        .collect();
    if !isolated.is_empty() && policy == IsolatedPolicy::Error {
        return Err(Error::IsolatedVertices { indices: isolated });
    }
    let degrees: Vec<f64> = graph
        .degrees()
        .iter()
        .map(|&d| if d == 0.0 { 1.0 } else { d })
        .collect();
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let raw = graph.degrees();
    // off-diagonal entry for edge weight w between i and j
    let off = |i: usize, j: usize, w: f64| match kind {
        LaplacianKind::Unnormalized => -w,
        LaplacianKind::Symmetric => -w * inv_sqrt[i] * inv_sqrt[j],
        LaplacianKind::RandomWalk => -w / degrees[i],
    };
    let diag = |i: usize| match kind {
        LaplacianKind::Unnormalized => raw[i],
        _ => 1.0,
    };
    let matrix = match graph.storage() {
        GraphStorage::Sparse(w) => {
            let n = w.n();
            let mut triplets = Vec::with_capacity(w.nnz() + n);
            for i in 0..n {
                triplets.push((i, i, diag(i)));
                for (j, v) in w.row(i) {
                    triplets.push((i, j, off(i, j, v)));
                }
            }
            let mut m = CsrMatrix::from_triplets(n, triplets);
            if kind == LaplacianKind::Symmetric {
                // the two products w·a·b and w·b·a can round differently
                m = m.map_values(|i, j, v| if j < i { off(j, i, w.get(j, i)) } else { v });
            }
            GraphStorage::Sparse(m)
        }
        GraphStorage::Dense(w) => {
            let n = w.nrows();
            let mut m = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    m[[i, j]] = if i == j { diag(i) } else { off(i, j, w[[i, j]]) };
                }
            }
            if kind == LaplacianKind::Symmetric {
                for i in 0..n {
                    for j in 0..i {
                        m[[i, j]] = m[[j, i]];
                    }
                }
            }
            GraphStorage::Dense(m)
        }
    };
    Ok(LaplacianMatrix {
        matrix,
        kind,
        degrees,
    })
}
