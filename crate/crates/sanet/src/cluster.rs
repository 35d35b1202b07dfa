//! k-means and clustering metrics.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KMeansOptions {
    #[serde(default = "KMeansOptions::default_restarts")]
    pub restarts: usize,
    #[serde(default = "KMeansOptions::default_max_iter")]
    pub max_iter: usize,
    /// Stop once no center moves farther than this.
    #[serde(default = "KMeansOptions::default_tol")]
    pub tol: f64,
}

impl KMeansOptions {
    fn default_restarts() -> usize {
        10
    }

    fn default_max_iter() -> usize {
        300
    }

    fn default_tol() -> f64 {
        1e-6
    }
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            restarts: Self::default_restarts(),
            max_iter: Self::default_max_iter(),
            tol: Self::default_tol(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClusterResult {
    pub labels: Vec<usize>,
    pub centers: Array2<f64>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best of `restarts` k-means++ initializations refined by Lloyd iterations.
///
/// An emptied cluster is re-seeded at the point farthest from its current
/// center. Restart `r` draws from its own stream derived from `seed`, so the
/// result does not depend on how restarts are scheduled across threads.
pub fn kmeans(
    points: ArrayView2<'_, f64>,
    k: usize,
    opts: &KMeansOptions,
    seed: u64,
) -> Result<ClusterResult> {
    let (n, d) = points.dim();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k-means needs 1 <= k <= n, got k = {k}, n = {n}")));
    }
    if d == 0 {
        return Err(Error::Input("k-means needs at least one feature".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("k-means input contains non-finite values".into()));
    }
    let data = points.as_standard_layout().into_owned();
    let restarts = opts.restarts.max(1);
    let runs: Vec<ClusterResult> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            lloyd(&data, k, opts, &mut rng)
        })
        .collect();
    let best = runs
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.inertia.total_cmp(&b.inertia).then(ia.cmp(ib)))
        .map(|(_, r)| r)
        .expect("at least one restart");
    Ok(best)
}

fn plus_plus(data: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = data.nrows();
    let row = |i: usize| data.row(i).to_slice().expect("standard layout");
    let mut centers = Array2::zeros((k, data.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&data.row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&data.row(pick));
        for (i, best) in closest.iter_mut().enumerate() {
            *best = best.min(sq_dist(row(i), row(pick)));
        }
    }
    centers
}

/// Nearest center of every point. Candidate distances come from one matrix
/// product; the reported distance is recomputed exactly.
fn assign(data: &Array2<f64>, centers: &Array2<f64>, labels: &mut [usize], dists: &mut [f64]) {
    let cross = data.dot(&centers.t());
    let center_norms: Vec<f64> = centers.axis_iter(Axis(0)).map(|c| c.dot(&c)).collect();
    for (i, x) in data.axis_iter(Axis(0)).enumerate() {
        let mut best = (f64::INFINITY, 0);
        for (c, &norm) in center_norms.iter().enumerate() {
            // ‖x − c‖² minus the constant ‖x‖²
            let score = norm - 2.0 * cross[[i, c]];
            if score < best.0 {
                best = (score, c);
            }
        }
        labels[i] = best.1;
        dists[i] = sq_dist(
            x.as_slice().expect("standard layout"),
            centers.row(best.1).as_slice().expect("standard layout"),
        );
    }
}

fn lloyd(data: &Array2<f64>, k: usize, opts: &KMeansOptions, rng: &mut ChaCha8Rng) -> ClusterResult {
    let (n, d) = data.dim();
    let mut centers = plus_plus(data, k, rng);
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0; n];
    assign(data, &centers, &mut labels, &mut dists);
    let mut inertia: f64 = dists.iter().sum();
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            sums.row_mut(l).scaled_add(1.0, &data.row(i));
        }
        let mut next = centers.clone();
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                next.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                // farthest point from its own center, each used once
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("k <= n");
                taken[far] = true;
                next.row_mut(c).assign(&data.row(far));
            }
        }
        let shift = centers
            .axis_iter(Axis(0))
            .zip(next.axis_iter(Axis(0)))
            .map(|(a, b)| sq_dist(a.as_slice().unwrap(), b.as_slice().unwrap()).sqrt())
            .fold(0.0, f64::max);
        centers = next;
        assign(data, &centers, &mut labels, &mut dists);
        let updated: f64 = dists.iter().sum();
        debug_assert!(updated <= inertia * (1.0 + 1e-9) + 1e-12, "inertia increased");
        inertia = updated;
        if shift < opts.tol {
            break;
        }
    }
    ClusterResult {
        labels,
        centers,
        inertia,
        iterations,
    }
}

/// Minimum-cost perfect matching on a square cost matrix; entry `i` of the
/// result is the column assigned to row `i`.
pub fn hungarian(cost: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    let (r, c) = cost.dim();
    if r != c {
        return Err(Error::Input(format!("assignment cost is {r}x{c}, not square")));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("assignment cost contains non-finite entries".into()));
    }
    let n = r;
    // potentials formulation, 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

/// Contingency table, predicted clusters as rows and true classes as columns.
pub fn confusion(pred: &[usize], truth: &[usize]) -> Result<Array2<usize>> {
    if pred.len() != truth.len() {
        return Err(Error::Input(format!(
            "label lengths differ: {} predicted, {} true",
            pred.len(),
            truth.len()
        )));
    }
    let rows = pred.iter().max().map_or(0, |m| m + 1);
    let cols = truth.iter().max().map_or(0, |m| m + 1);
    let mut table = Array2::zeros((rows, cols));
    for (&p, &t) in pred.iter().zip(truth) {
        table[[p, t]] += 1;
    }
    Ok(table)
}

/// Fraction of points correctly labeled under the best one-to-one mapping
/// from clusters to classes.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = confusion(pred, truth)?;
    if pred.is_empty() {
        return Err(Error::Input("accuracy of an empty labeling".into()));
    }
    Ok(matched_count(&table) as f64 / pred.len() as f64)
}

fn matched_count(table: &Array2<usize>) -> usize {
    let size = table.nrows().max(table.ncols());
    let mut cost = Array2::<f64>::zeros((size, size));
    for ((i, j), &c) in table.indexed_iter() {
        cost[[i, j]] = -(c as f64);
    }
    let assignment = hungarian(cost.view()).expect("finite square cost");
    assignment
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < table.nrows() && j < table.ncols())
        .map(|(i, &j)| table[[i, j]])
        .sum()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmiNormalization {
    /// `I / sqrt(H_p H_t)`
    #[default]
    Geometric,
    /// `2I / (H_p + H_t)`
    Arithmetic,
}

/// Normalized mutual information with natural-log entropies; zero when
/// either labeling has zero entropy.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    nmi_with(pred, truth, NmiNormalization::Geometric)
}

pub fn nmi_with(pred: &[usize], truth: &[usize], norm: NmiNormalization) -> Result<f64> {
    let table = confusion(pred, truth)?;
    let n = pred.len();
    if n == 0 {
        return Err(Error::Input("nmi of an empty labeling".into()));
    }
    let nf = n as f64;
    let rows = table.sum_axis(Axis(1));
    let cols = table.sum_axis(Axis(0));
    let entropy = |counts: &ndarray::Array1<usize>| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                -p * p.ln()
            })
            .sum()
    };
    let hp = entropy(&rows);
    let ht = entropy(&cols);
    if hp <= 0.0 || ht <= 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for ((i, j), &c) in table.indexed_iter() {
        if c > 0 {
            let c = c as f64;
            mi += c / nf * (c * nf / (rows[i] as f64 * cols[j] as f64)).ln();
        }
    }
    let value = match norm {
        NmiNormalization::Geometric => mi / (hp * ht).sqrt(),
        NmiNormalization::Arithmetic => 2.0 * mi / (hp + ht),
    };
    Ok(value.clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc: f64,
    pub nmi: f64,
    pub k: usize,
    pub n: usize,
    pub confusion: Vec<Vec<usize>>,
}

impl MetricReport {
    pub fn evaluate(pred: &[usize], truth: &[usize], k: usize) -> Result<Self> {
        let table = confusion(pred, truth)?;
        Ok(MetricReport {
            acc: accuracy(pred, truth)?,
            nmi: nmi(pred, truth)?,
            k,
            n: pred.len(),
            confusion: table.rows().into_iter().map(|r| r.to_vec()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn two_points_two_clusters() {
        let p = arr2(&[[0.0, 0.0], [1.0, 1.0]]);
        let r = kmeans(p.view(), 2, &KMeansOptions::default(), 3).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert_ne!(r.labels[0], r.labels[1]);
    }

    #[test]
    fn single_cluster_center_is_mean() {
        let p = arr2(&[[0.0], [2.0], [4.0]]);
        let r = kmeans(p.view(), 1, &KMeansOptions::default(), 0).unwrap();
        assert_eq!(r.labels, vec![0, 0, 0]);
        assert!((r.centers[[0, 0]] - 2.0).abs() < 1e-12);
        assert!((r.inertia - 8.0).abs() < 1e-12);
    }

    #[test]
    fn hungarian_small_cases() {
        let a = hungarian(arr2(&[[0.0, 1.0], [1.0, 0.0]]).view()).unwrap();
        assert_eq!(a, vec![0, 1]);
        let b = hungarian(arr2(&[[1.0, 0.0], [0.0, 1.0]]).view()).unwrap();
        assert_eq!(b, vec![1, 0]);
        assert!(hungarian(arr2(&[[f64::NAN]]).view()).is_err());
    }

    #[test]
    fn accuracy_and_nmi_examples() {
        assert_eq!(accuracy(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert_eq!(accuracy(&[2, 2, 0, 1], &[0, 0, 1, 2]).unwrap(), 1.0);
        assert!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap().abs() < 1e-12);
        assert!((nmi(&[1, 1, 0, 2], &[0, 0, 1, 2]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 0], &[0, 1, 2]).unwrap(), 0.0);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }
}
