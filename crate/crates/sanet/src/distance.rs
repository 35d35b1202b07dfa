//! Pairwise Euclidean distances over a point set, with the shared products
//! the graph builders need: sorted neighbor tables and the Euclidean minimum
//! spanning tree.
//!
//! Small problems are evaluated directly as `Σ (x_i − x_j)²`. Larger ones use
//! the expansion `|x_i|² + |x_j|² − 2 x_i·x_j` in row blocks (a matrix
//! product), and then recompute exactly every entry where cancellation could
//! matter: near-coincident pairs, and pairs whose value decides a neighbor
//! cut-off or an ε threshold. Exact duplicates therefore always sit at
//! distance exactly 0 and index tie-breaking stays meaningful.

use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Entries with `d² < SNAP · (|x_i|² + |x_j|²)` are recomputed exactly.
const SNAP: f64 = 1e-3;
/// Relative band around a cut-off inside which approximate values are rechecked.
const BAND: f64 = 1e-7;
/// Work (`n · n · d`) at or below which every distance is computed directly.
const DIRECT_WORK: f64 = 3e7;
/// Largest `n²` for which the full distance matrix is kept in memory.
const FULL_ENTRIES: usize = 110_000_000;
const BLOCK_ROWS: usize = 256;

/// Squared Euclidean distance, evaluated term by term.
#[inline]
pub fn exact_sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    match (a.as_slice(), b.as_slice()) {
        (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        _ => a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum(),
    }
}

/// How distances are evaluated for a [`PointCloud`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistanceMode {
    /// Pick by problem size.
    Auto,
    /// Exact term-by-term evaluation of every pair.
    Direct,
    /// Block matrix products with exact recomputation where it matters.
    Blocked,
}

/// A point set (rows of a matrix) with lazily computed distance products.
pub struct PointCloud<'a> {
    points: ArrayView2<'a, f64>,
    sq_norms: Vec<f64>,
    direct: bool,
    full: OnceLock<Option<Array2<f64>>>,
    allow_full: bool,
    neighbors: Mutex<Option<Arc<NeighborTable>>>,
    mst: OnceLock<Arc<Vec<MstEdge>>>,
}

impl<'a> PointCloud<'a> {
    pub fn new(points: ArrayView2<'a, f64>) -> Self {
        Self::with_mode(points, DistanceMode::Auto)
    }

    pub fn with_mode(points: ArrayView2<'a, f64>, mode: DistanceMode) -> Self {
        let n = points.nrows() as f64;
        let d = points.ncols() as f64;
        let direct = match mode {
            DistanceMode::Direct => true,
            DistanceMode::Blocked => false,
            DistanceMode::Auto => n * n * d <= DIRECT_WORK,
        };
        let sq_norms = points.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
        PointCloud {
            points,
            sq_norms,
            direct,
            full: OnceLock::new(),
            allow_full: mode != DistanceMode::Blocked,
            neighbors: Mutex::new(None),
            mst: OnceLock::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'a, f64> {
        self.points
    }

    pub fn exact(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        exact_sq_dist(self.points.row(i), self.points.row(j))
    }

    fn full_matrix(&self) -> Option<&Array2<f64>> {
        self.full
            .get_or_init(|| {
                let n = self.len();
                if !self.allow_full || n.saturating_mul(n) > FULL_ENTRIES {
                    return None;
                }
                let mut full = Array2::<f64>::zeros((n, n));
                let mut start = 0;
                while start < n {
                    let end = (start + BLOCK_ROWS).min(n);
                    let block = self.compute_rows(start, end);
                    full.slice_mut(s![start..end, ..]).assign(&block);
                    start = end;
                }
                // mirror the upper triangle so every consumer sees d(i,j) == d(j,i)
                for i in 0..n {
                    for j in 0..i {
                        full[[i, j]] = full[[j, i]];
                    }
                }
                Some(full)
            })
            .as_ref()
    }

    fn compute_rows(&self, start: usize, end: usize) -> Array2<f64> {
        let idx: Vec<usize> = (start..end).collect();
        self.compute_rows_for(&idx)
    }

    /// Squared distances from each listed point to every point.
    fn compute_rows_for(&self, rows: &[usize]) -> Array2<f64> {
        let n = self.len();
        let mut out = Array2::<f64>::zeros((rows.len(), n));
        if self.direct {
            for (r, &i) in rows.iter().enumerate() {
                let xi = self.points.row(i);
                for j in 0..n {
                    if j != i {
                        out[[r, j]] = exact_sq_dist(xi, self.points.row(j));
                    }
                }
            }
            return out;
        }
        let sub = self.points.select(Axis(0), rows);
        let gram = sub.dot(&self.points.t());
        for (r, &i) in rows.iter().enumerate() {
            let ni = self.sq_norms[i];
            let xi = self.points.row(i);
            let grow = gram.row(r);
            let mut orow = out.row_mut(r);
            for j in 0..n {
                let scale = ni + self.sq_norms[j];
                let mut v = scale - 2.0 * grow[j];
                if v < SNAP * scale {
                    v = if j == i {
                        0.0
                    } else {
                        exact_sq_dist(xi, self.points.row(j))
                    };
                }
                orow[j] = v.max(0.0);
            }
        }
        out
    }

    /// Squared distances for the contiguous row range `start..end`.
    ///
    /// Entries are exact in direct mode and within a relative `1e-9` or so
    /// otherwise; callers comparing against a threshold should recheck
    /// borderline values with [`PointCloud::exact`].
    pub fn rows(&self, start: usize, end: usize) -> Array2<f64> {
        match self.full_matrix() {
            Some(full) => full.slice(s![start..end, ..]).to_owned(),
            None => self.compute_rows(start, end),
        }
    }

    /// Visits the distance matrix in row blocks: `f(first_row, block)`.
    pub fn for_each_block(&self, mut f: impl FnMut(usize, ArrayView2<'_, f64>)) {
        let n = self.len();
        if let Some(full) = self.full_matrix() {
            f(0, full.view());
            return;
        }
        let mut start = 0;
        while start < n {
            let end = (start + BLOCK_ROWS).min(n);
            let block = self.compute_rows(start, end);
            f(start, block.view());
            start = end;
        }
    }

    /// Squared distances from every point to each of `targets` (`n × targets`).
    pub fn sq_dists_to(&self, targets: &[usize]) -> Array2<f64> {
        if let Some(full) = self.full_matrix() {
            return full.select(Axis(1), targets);
        }
        self.compute_rows_for(targets).reversed_axes().as_standard_layout().to_owned()
    }

    /// Nearest-neighbor table with at least `k` entries per point, shared
    /// between callers and recomputed only when a larger `k` is requested.
    pub fn neighbors(&self, k: usize) -> Result<Arc<NeighborTable>> {
        let n = self.len();
        if k == 0 || k >= n {
            return Err(Error::Config(format!(
                "neighbor count {k} must satisfy 1 <= k < n = {n}"
            )));
        }
        let mut guard = self.neighbors.lock().expect("neighbor cache poisoned");
        if let Some(t) = guard.as_ref() {
            if t.k >= k {
                return Ok(Arc::clone(t));
            }
        }
        let table = Arc::new(NeighborTable::build(self, k));
        *guard = Some(Arc::clone(&table));
        Ok(table)
    }

    /// Edges of a Euclidean minimum spanning tree (`n − 1` of them).
    pub fn mst(&self) -> Result<Arc<Vec<MstEdge>>> {
        if self.len() < 2 {
            return Err(Error::Input(format!(
                "a spanning tree needs at least 2 points, got {}",
                self.len()
            )));
        }
        if let Some(m) = self.mst.get() {
            return Ok(Arc::clone(m));
        }
        let edges = if self.direct || self.full_matrix().is_some() {
            self.mst_prim()
        } else {
            let table = self.neighbors(MST_NEIGHBORS.min(self.len() - 1))?;
            self.mst_boruvka(&table)
        };
        Ok(Arc::clone(self.mst.get_or_init(|| Arc::new(edges))))
    }

    /// Squared length of the longest MST edge.
    pub fn mst_longest_sq(&self) -> Result<f64> {
        Ok(self.mst()?.iter().map(|e| e.sq_len).fold(0.0, f64::max))
    }

    fn mst_prim(&self) -> Vec<MstEdge> {
        let n = self.len();
        let full = self.full_matrix();
        let mut in_tree = vec![false; n];
        let mut key = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        let mut edges = Vec::with_capacity(n - 1);
        let mut current = 0;
        in_tree[0] = true;
        for _ in 1..n {
            let row = match full {
                Some(f) => f.row(current).to_owned(),
                None => self.compute_rows(current, current + 1).row(0).to_owned(),
            };
            let mut best = (f64::INFINITY, usize::MAX);
            for v in 0..n {
                if in_tree[v] {
                    continue;
                }
                if row[v] < key[v] {
                    key[v] = row[v];
                    parent[v] = current;
                }
                if key[v] < best.0 {
                    best = (key[v], v);
                }
            }
            let v = best.1;
            in_tree[v] = true;
            edges.push(MstEdge {
                a: parent[v].min(v),
                b: parent[v].max(v),
                sq_len: self.exact(parent[v], v),
            });
            current = v;
        }
        edges
    }

    fn mst_boruvka(&self, table: &NeighborTable) -> Vec<MstEdge> {
        let n = self.len();
        let mut uf = UnionFind::new(n);
        let mut edges = Vec::with_capacity(n - 1);
        let exhaustive = table.k + 1 >= n;
        while edges.len() + 1 < n {
            let comp: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
            let mut size = vec![0usize; n];
            for &c in &comp {
                size[c] += 1;
            }
            let largest = (0..n).max_by_key(|&c| (size[c], usize::MAX - c)).unwrap();
            let mut best: Vec<Option<(f64, usize, usize)>> = vec![None; n];
            let mut unresolved = Vec::new();
            for i in 0..n {
                let c = comp[i];
                if c == largest {
                    continue;
                }
                match table.neighbors_of(i).find(|&(j, _)| comp[j] != c) {
                    Some((j, d2)) => offer(&mut best[c], (d2, i.min(j), i.max(j))),
                    None if !exhaustive => unresolved.push(i),
                    None => {}
                }
            }
            // points whose whole list is inside their component: the true
            // nearest outside point is no closer than the last list entry
            let needy: Vec<usize> = unresolved
                .into_iter()
                .filter(|&i| {
                    let bound = table.neighbors_of(i).last().map_or(0.0, |(_, d)| d);
                    best[comp[i]].is_none_or(|b| bound < b.0)
                })
                .collect();
            for chunk in needy.chunks(BLOCK_ROWS) {
                let block = self.compute_rows_for(chunk);
                for (r, &i) in chunk.iter().enumerate() {
                    let c = comp[i];
                    let row = block.row(r);
                    let approx_min = (0..n)
                        .filter(|&j| comp[j] != c)
                        .map(|j| row[j])
                        .fold(f64::INFINITY, f64::min);
                    let cut = approx_min * (1.0 + BAND) + f64::MIN_POSITIVE;
                    for j in (0..n).filter(|&j| comp[j] != c && row[j] <= cut) {
                        offer(&mut best[c], (self.exact(i, j), i.min(j), i.max(j)));
                    }
                }
            }
            for c in 0..n {
                if let Some((d2, a, b)) = best[c] {
                    if uf.union(a, b) {
                        edges.push(MstEdge { a, b, sq_len: d2 });
                    }
                }
            }
        }
        edges
    }
}

fn offer(slot: &mut Option<(f64, usize, usize)>, cand: (f64, usize, usize)) {
    let better = match slot {
        None => true,
        Some(cur) => (cand.0, cand.1, cand.2) < (cur.0, cur.1, cur.2),
    };
    if better {
        *slot = Some(cand);
    }
}

/// Neighbor list length used to accelerate the blocked MST.
pub const MST_NEIGHBORS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub sq_len: f64,
}

/// The `k` nearest neighbors of every point, sorted by `(distance, index)`,
/// excluding the point itself. Alongside, the same list restricted to points
/// at strictly positive distance (duplicates skipped).
#[derive(Clone, Debug)]
pub struct NeighborTable {
    pub k: usize,
    n: usize,
    index: Vec<usize>,
    sq_dist: Vec<f64>,
    distinct_sq_dist: Vec<f64>,
}

impl NeighborTable {
    fn build(cloud: &PointCloud<'_>, k: usize) -> Self {
        let n = cloud.len();
        let mut index = vec![0; n * k];
        let mut sq_dist = vec![0.0; n * k];
        let mut distinct_sq_dist = vec![f64::INFINITY; n * k];
        let mut buf: Vec<(f64, usize)> = Vec::with_capacity(n);
        cloud.for_each_block(|start, block| {
            for (r, row) in block.axis_iter(Axis(0)).enumerate() {
                let i = start + r;
                buf.clear();
                buf.extend((0..n).filter(|&j| j != i).map(|j| (row[j], j)));
                let sel = select_smallest(cloud, i, &mut buf, k, cloud.direct);
                for (t, &(d, j)) in sel.iter().enumerate() {
                    index[i * k + t] = j;
                    sq_dist[i * k + t] = d;
                }
                buf.clear();
                buf.extend((0..n).filter(|&j| j != i && row[j] > 0.0).map(|j| (row[j], j)));
                let sel = select_smallest(cloud, i, &mut buf, k, cloud.direct);
                for (t, &(d, _)) in sel.iter().enumerate() {
                    distinct_sq_dist[i * k + t] = d;
                }
            }
        });
        NeighborTable {
            k,
            n,
            index,
            sq_dist,
            distinct_sq_dist,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `(neighbor, squared distance)` pairs of point `i`, nearest first.
    pub fn neighbors_of(&self, i: usize) -> impl DoubleEndedIterator<Item = (usize, f64)> + '_ {
        let r = i * self.k..(i + 1) * self.k;
        self.index[r.clone()]
            .iter()
            .copied()
            .zip(self.sq_dist[r].iter().copied())
    }

    /// Squared distance to the `k`-th nearest neighbor (1-based).
    pub fn kth_sq_dist(&self, i: usize, k: usize) -> f64 {
        assert!(k >= 1 && k <= self.k);
        self.sq_dist[i * self.k + k - 1]
    }

    /// Squared distance to the `k`-th nearest point at positive distance, or
    /// `None` when fewer than `k` distinct points exist.
    pub fn kth_distinct_sq_dist(&self, i: usize, k: usize) -> Option<f64> {
        assert!(k >= 1 && k <= self.k);
        let d = self.distinct_sq_dist[i * self.k + k - 1];
        d.is_finite().then_some(d)
    }
}

/// Sorts the `k` smallest `(d², j)` pairs of `buf` by `(exact d², j)`.
fn select_smallest(
    cloud: &PointCloud<'_>,
    i: usize,
    buf: &mut Vec<(f64, usize)>,
    k: usize,
    exact: bool,
) -> Vec<(f64, usize)> {
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if buf.is_empty() {
        return Vec::new();
    }
    let k = k.min(buf.len());
    if !exact {
        buf.select_nth_unstable_by(k - 1, cmp);
        let cut = buf[k - 1].0 * (1.0 + BAND) + f64::MIN_POSITIVE;
        // keep everything that might belong to the true top k, then rank exactly
        let mut cands: Vec<(f64, usize)> = buf[..k].to_vec();
        cands.extend(buf[k..].iter().filter(|c| c.0 <= cut));
        for c in cands.iter_mut() {
            c.0 = cloud.exact(i, c.1);
        }
        cands.sort_unstable_by(cmp);
        cands.truncate(k);
        return cands;
    }
    if k < buf.len() {
        buf.select_nth_unstable_by(k - 1, cmp);
    }
    let mut out = buf[..k].to_vec();
    out.sort_unstable_by(cmp);
    out
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.parent[hi] = lo;
        true
    }
}
