//! Smallest eigenpairs of graph Laplacians.
//!
//! Three solvers are available: a dense exact decomposition, a restarted
//! Lanczos iteration for sparse matrices, and a Nyström approximation for
//! dense affinities. Every returned embedding is sign-canonical: each column
//! is flipped so that its largest-magnitude entry is positive.

mod dense;
mod lanczos;
mod nystrom;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::distance::PointCloud;
use crate::error::{Error, Result};
use crate::graph::{build_affinity, AffinityGraph, AffinityScheme, GraphLimits, GraphStorage};
use crate::laplacian::{build_laplacian, IsolatedPolicy, LaplacianKind};
use crate::sparse::CsrMatrix;

pub use dense::symmetric_eigen;
pub use lanczos::{lanczos_smallest_op, EigenPairs, LanczosOptions, SymOperator};
pub use nystrom::{nystrom_embedding, nystrom_in};

pub const DEFAULT_LANCZOS_TOL: f64 = 1e-10;
pub const DEFAULT_LANCZOS_MAX_ITER: usize = 100_000;

fn default_tol() -> f64 {
    DEFAULT_LANCZOS_TOL
}

fn default_max_iter() -> usize {
    DEFAULT_LANCZOS_MAX_ITER
}

/// Eigensolver selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverSpec {
    DenseExact,
    Lanczos {
        #[serde(default = "default_tol")]
        tol: f64,
        /// Cap on operator applications.
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
    Nystrom {
        sample_fraction: f64,
        /// Landmark sampling seed; derived from the run seed when absent.
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl SolverSpec {
    pub fn lanczos() -> Self {
        SolverSpec::Lanczos {
            tol: DEFAULT_LANCZOS_TOL,
            max_iter: DEFAULT_LANCZOS_MAX_ITER,
        }
    }

    pub fn nystrom(sample_fraction: f64, seed: u64) -> Self {
        SolverSpec::Nystrom {
            sample_fraction,
            seed: Some(seed),
        }
    }

    pub fn tag(&self) -> SolverTag {
        match self {
            SolverSpec::DenseExact => SolverTag::DenseExact,
            SolverSpec::Lanczos { .. } => SolverTag::Lanczos,
            SolverSpec::Nystrom { .. } => SolverTag::Nystrom,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SolverSpec::DenseExact => Ok(()),
            SolverSpec::Lanczos { tol, max_iter } => {
                if !(*tol > 0.0 && tol.is_finite()) {
                    return Err(Error::Config(format!("lanczos tol {tol} must be positive")));
                }
                if *max_iter == 0 {
                    return Err(Error::Config("lanczos max_iter must be positive".into()));
                }
                Ok(())
            }
            SolverSpec::Nystrom {
                sample_fraction, ..
            } => {
                if !(*sample_fraction > 0.0 && *sample_fraction <= 1.0) {
                    return Err(Error::Config(format!(
                        "nystrom sample_fraction {sample_fraction} must lie in (0, 1]"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Rejects sparse schemes with Nyström and dense schemes with Lanczos.
    pub fn check_pairing(&self, scheme: &AffinityScheme) -> Result<()> {
        match (self, scheme.is_dense()) {
            (SolverSpec::Nystrom { .. }, false) => Err(Error::Config(format!(
                "nystrom needs a dense affinity, got {}",
                scheme.label()
            ))),
            (SolverSpec::Lanczos { .. }, true) => Err(Error::Config(format!(
                "lanczos needs a sparse affinity, got {}",
                scheme.label()
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverTag {
    DenseExact,
    Lanczos,
    Nystrom,
}

/// `n × k` matrix `Q` of eigenvectors for the `k` smallest eigenvalues.
/// Row `i` is the spectral feature vector of point `i`.
#[derive(Clone, Debug)]
pub struct SpectralEmbedding {
    pub vectors: Array2<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Laplacian the pairs belong to, if they came from one.
    pub kind: Option<LaplacianKind>,
    pub solver: SolverTag,
}

impl SpectralEmbedding {
    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn k(&self) -> usize {
        self.vectors.ncols()
    }

    /// Drops the first `count` columns.
    pub fn skip_leading(mut self, count: usize) -> Self {
        let count = count.min(self.k());
        self.vectors = self.vectors.slice(ndarray::s![.., count..]).to_owned();
        self.eigenvalues.drain(..count);
        self
    }

    fn canonical(
        vectors: Array2<f64>,
        eigenvalues: Vec<f64>,
        kind: Option<LaplacianKind>,
        solver: SolverTag,
    ) -> Self {
        let (vectors, eigenvalues) = canonicalize(vectors, eigenvalues);
        SpectralEmbedding {
            vectors,
            eigenvalues,
            kind,
            solver,
        }
    }
}

/// Index of the largest-magnitude entry, first on ties.
fn peak_index(col: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() {
            best = i;
        }
    }
    best
}

/// Flips every column so its largest-magnitude entry is positive, then
/// orders columns by eigenvalue and, on exact ties, by first nonzero index.
pub fn canonicalize(mut vectors: Array2<f64>, eigenvalues: Vec<f64>) -> (Array2<f64>, Vec<f64>) {
    for mut col in vectors.columns_mut() {
        let p = peak_index(col.view());
        if col[p] < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
    let first_nonzero: Vec<usize> = vectors
        .columns()
        .into_iter()
        .map(|c| c.iter().position(|&x| x != 0.0).unwrap_or(c.len()))
        .collect();
    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eigenvalues[a]
            .total_cmp(&eigenvalues[b])
            .then(first_nonzero[a].cmp(&first_nonzero[b]))
            .then(a.cmp(&b))
    });
    let sorted = Array2::from_shape_fn(vectors.dim(), |(r, c)| vectors[[r, order[c]]]);
    let values = order.iter().map(|&i| eigenvalues[i]).collect();
    (sorted, values)
}

/// The `k` smallest eigenpairs of a symmetric matrix by full decomposition.
pub fn smallest_eigs_dense(m: ArrayView2<'_, f64>, k: usize) -> Result<SpectralEmbedding> {
    dense::check_symmetric(m)?;
    let n = m.nrows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("requested {k} eigenpairs of a {n}x{n} matrix")));
    }
    let (values, vectors) = symmetric_eigen(m);
    let q = vectors.slice(ndarray::s![.., ..k]).to_owned();
    Ok(SpectralEmbedding::canonical(q, values[..k].to_vec(), None, SolverTag::DenseExact))
}

/// The `k` smallest eigenpairs of a sparse symmetric matrix by Lanczos.
pub fn lanczos_smallest(m: &CsrMatrix, k: usize, tol: f64, max_iter: usize) -> Result<SpectralEmbedding> {
    if !m.is_symmetric() {
        return Err(Error::Contract("lanczos needs a symmetric matrix".into()));
    }
    let opts = LanczosOptions {
        tol,
        max_iter,
        ..LanczosOptions::default()
    };
    if k == 0 || k > m.n() {
        return Err(Error::Config(format!("requested {k} eigenpairs of a {0}x{0} matrix", m.n())));
    }
    let (vectors, values) = solve_by_components(m, k, &opts, 0)?;
    Ok(SpectralEmbedding::canonical(vectors, values, None, SolverTag::Lanczos))
}

/// Knobs shared by every procedure of a spectral layer.
#[derive(Clone, Debug)]
pub struct SpectralOptions {
    pub isolated: IsolatedPolicy,
    pub max_edges: usize,
    /// Drop the eigenvector of the smallest eigenvalue.
    pub skip_trivial: bool,
    /// Seed for Lanczos restarts and for Nyström landmarks without their own seed.
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            isolated: IsolatedPolicy::UnitDegree,
            max_edges: usize::MAX,
            skip_trivial: false,
            seed: 0,
        }
    }
}

/// Graph construction, Laplacian and eigensolve in one call.
pub fn spectral_features(
    points: ArrayView2<'_, f64>,
    scheme: &AffinityScheme,
    kind: LaplacianKind,
    solver: &SolverSpec,
    k: usize,
) -> Result<SpectralEmbedding> {
    spectral_features_in(&PointCloud::new(points), scheme, kind, solver, k, &SpectralOptions::default())
}

/// [`spectral_features`] over a prepared point cloud, so several procedures
/// can share cached neighbor tables and spanning trees.
pub fn spectral_features_in(
    cloud: &PointCloud<'_>,
    scheme: &AffinityScheme,
    kind: LaplacianKind,
    solver: &SolverSpec,
    k: usize,
    opts: &SpectralOptions,
) -> Result<SpectralEmbedding> {
    solver.validate()?;
    solver.check_pairing(scheme)?;
    let n = cloud.len();
    let wanted = k + usize::from(opts.skip_trivial);
    if k == 0 || wanted > n {
        return Err(Error::Config(format!("cannot extract {k} spectral features from {n} points")));
    }
    let embedding = match solver {
        SolverSpec::Nystrom {
            sample_fraction,
            seed,
        } => nystrom_in(cloud, scheme, kind, wanted, *sample_fraction, seed.unwrap_or(opts.seed))?,
        _ => {
            let limits = GraphLimits {
                max_edges: opts.max_edges,
            };
            let graph = build_affinity(cloud, scheme, limits)?;
            solve_graph(&graph, kind, solver, wanted, opts)?
        }
    };
    Ok(if opts.skip_trivial {
        embedding.skip_leading(1)
    } else {
        embedding
    })
}

/// Eigensolve of the Laplacian of an existing graph with a dense or Lanczos solver.
pub fn solve_graph(
    graph: &AffinityGraph,
    kind: LaplacianKind,
    solver: &SolverSpec,
    k: usize,
    opts: &SpectralOptions,
) -> Result<SpectralEmbedding> {
    // the random-walk problem is solved through its symmetric twin
    let solve_kind = match kind {
        LaplacianKind::RandomWalk => LaplacianKind::Symmetric,
        other => other,
    };
    let lap = build_laplacian(graph, solve_kind, opts.isolated)?;
    let (mut vectors, values) = match (solver, lap.storage()) {
        (SolverSpec::DenseExact, _) => {
            let (values, vectors) = symmetric_eigen(lap.to_dense().view());
            (vectors.slice(ndarray::s![.., ..k]).to_owned(), values[..k].to_vec())
        }
        (SolverSpec::Lanczos { tol, max_iter }, GraphStorage::Sparse(m)) => {
            let lopts = LanczosOptions {
                tol: *tol,
                max_iter: *max_iter,
                basis_size: None,
                seed: opts.seed,
            };
            solve_by_components(m, k, &lopts, DENSE_COMPONENT)?
        }
        (SolverSpec::Lanczos { tol, max_iter }, GraphStorage::Dense(m)) => {
            let lopts = LanczosOptions {
                tol: *tol,
                max_iter: *max_iter,
                basis_size: None,
                seed: opts.seed,
            };
            let pairs = lanczos_smallest_op(m, k, &lopts)?;
            (pairs.vectors, pairs.values)
        }
        (SolverSpec::Nystrom { .. }, _) => {
            return Err(Error::Config("nystrom works from points, not from a built graph".into()))
        }
    };
    if kind == LaplacianKind::RandomWalk {
        for mut col in vectors.columns_mut() {
            for (x, d) in col.iter_mut().zip(lap.degrees()) {
                *x /= d.sqrt();
            }
            let nrm = col.dot(&col).sqrt();
            col.mapv_inplace(|x| x / nrm);
        }
    }
    Ok(SpectralEmbedding::canonical(vectors, values, Some(kind), solver.tag()))
}

/// Largest component solved densely instead of by Lanczos.
const DENSE_COMPONENT: usize = 400;

/// Splits a sparse Laplacian into connected components, solves each one and
/// merges the `k` smallest pairs. Components decouple exactly, so repeated
/// eigenvalues caused by disconnection never reach the Krylov iteration.
/// Components up to `dense_below` vertices, and those too small for a useful
/// Krylov basis, are solved densely.
fn solve_by_components(
    m: &CsrMatrix,
    k: usize,
    opts: &LanczosOptions,
    dense_below: usize,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let n = m.n();
    let comps = components(m);
    // (eigenvalue, component, vector)
    let mut pool: Vec<(f64, usize, Vec<f64>)> = Vec::new();
    for (c, members) in comps.iter().enumerate() {
        let size = members.len();
        let want = k.min(size);
        let sub = submatrix(m, members);
        let (values, vectors) = if size <= dense_below || want * 2 + 20 >= size {
            let (values, vectors) = symmetric_eigen(sub.to_dense().view());
            (values[..want].to_vec(), vectors.slice(ndarray::s![.., ..want]).to_owned())
        } else {
            let pairs = lanczos_smallest_op(&sub, want, opts)?;
            (pairs.values, pairs.vectors)
        };
        for (j, &v) in values.iter().enumerate() {
            pool.push((v, c, vectors.column(j).to_vec()));
        }
    }
    // exact ties keep component order, which is ordered by smallest member
    pool.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    pool.truncate(k);
    let mut q = Array2::zeros((n, k));
    let mut values = Vec::with_capacity(k);
    for (col, (v, c, vec)) in pool.into_iter().enumerate() {
        for (&row, &x) in comps[c].iter().zip(&vec) {
            q[[row, col]] = x;
        }
        values.push(v);
    }
    Ok((q, values))
}

/// Connected components of the off-diagonal pattern, each listed ascending;
/// components are ordered by their smallest member.
fn components(m: &CsrMatrix) -> Vec<Vec<usize>> {
    let n = m.n();
    let mut label = vec![usize::MAX; n];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![s];
        label[s] = id;
        stack.push(s);
        while let Some(i) = stack.pop() {
            for (j, v) in m.row(i) {
                if j != i && v != 0.0 && label[j] == usize::MAX {
                    label[j] = id;
                    members.push(j);
                    stack.push(j);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

fn submatrix(m: &CsrMatrix, members: &[usize]) -> CsrMatrix {
    let mut local = std::collections::HashMap::with_capacity(members.len());
    for (p, &g) in members.iter().enumerate() {
        local.insert(g, p);
    }
    let mut t = Vec::new();
    for (p, &g) in members.iter().enumerate() {
        for (j, v) in m.row(g) {
            if let Some(&q) = local.get(&j) {
                t.push((p, q, v));
            }
        }
    }
    CsrMatrix::from_triplets(members.len(), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};

    #[test]
    fn identity_three_smallest() {
        let e = smallest_eigs_dense(Array2::<f64>::eye(5).view(), 3).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_axis_vectors() {
        let m = arr2(&[[2.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let e = smallest_eigs_dense(m.view(), 2).unwrap();
        assert_eq!(e.eigenvalues, vec![0.0, 1.0]);
        assert_eq!(e.vectors.column(0).to_vec(), vec![0.0, 1.0, 0.0]);
        assert_eq!(e.vectors.column(1).to_vec(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let m = arr2(&[[1.0, 2.0], [0.0, 1.0]]);
        assert!(matches!(smallest_eigs_dense(m.view(), 1), Err(Error::Contract(_))));
    }

    #[test]
    fn canonical_sign_makes_peak_positive() {
        let v = arr2(&[[0.1], [-0.9], [0.3]]);
        let (c, _) = canonicalize(v, vec![0.5]);
        assert_eq!(c.column(0).to_vec(), vec![-0.1, 0.9, -0.3]);
    }

    #[test]
    fn components_split_matches_dense() {
        // two triangles plus an isolated vertex
        let mut t = Vec::new();
        for base in [0usize, 3] {
            for i in 0..3 {
                t.push((base + i, base + i, 2.0));
                for j in 0..3 {
                    if i != j {
                        t.push((base + i, base + j, -1.0));
                    }
                }
            }
        }
        t.push((6, 6, 0.0));
        let m = CsrMatrix::from_triplets(7, t);
        let (_, values) = solve_by_components(&m, 4, &LanczosOptions::default(), DENSE_COMPONENT).unwrap();
        let (want, _) = symmetric_eigen(m.to_dense().view());
        for (a, b) in values.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
