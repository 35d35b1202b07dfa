//! Restarted Lanczos for the smallest eigenpairs of a symmetric operator.
//!
//! The operator `M` is shifted to `A = σI − M` with `σ` a Gershgorin bound,
//! so the wanted pairs become the largest of a positive semidefinite `A`.
//! Each basis vector is orthogonalized twice against the whole basis and all
//! locked vectors (full reorthogonalization), which makes the projected
//! matrix `H = Vᵀ A V` available explicitly. Restarts keep the leading Ritz
//! vectors together with the residual direction (a Krylov–Schur restart);
//! converged Ritz pairs are locked and deflated.
//!
//! A single Krylov sequence sees only one direction of a repeated
//! eigenvalue. Two mechanisms recover the rest: on breakdown the sequence
//! continues from a seeded random vector, and once `k` pairs are locked one
//! more cycle runs from a fresh random start to check that nothing larger
//! than the `k`-th locked value remains.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Symmetric linear operator.
pub trait SymOperator: Sync {
    fn dim(&self) -> usize;
    /// `y = M x`
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// Upper bound on the spectral radius.
    fn norm_bound(&self) -> f64;
}

impl SymOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y);
    }

    fn norm_bound(&self) -> f64 {
        self.max_abs_row_sum()
    }
}

impl SymOperator for Array2<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, row) in self.rows().into_iter().enumerate() {
            y[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn norm_bound(&self) -> f64 {
        self.rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanczosOptions {
    /// Residual tolerance relative to the operator norm bound.
    pub tol: f64,
    /// Maximum number of operator applications.
    pub max_iter: usize,
    /// Krylov basis size before a restart; defaults to `max(2k + 20, k + 32)`.
    pub basis_size: Option<usize>,
    /// Seed for the random vectors used after breakdowns.
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            tol: 1e-10,
            max_iter: 100_000,
            basis_size: None,
            seed: 0x1a2c_2052,
        }
    }
}

/// Eigenvalues (ascending) and matching unit eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Krylov<'a, O: SymOperator + ?Sized> {
    op: &'a O,
    n: usize,
    shift: f64,
    scale: f64,
    locked: Vec<Vec<f64>>,
    locked_theta: Vec<f64>,
    basis: Vec<Vec<f64>>,
    /// Projected matrix, `basis.len()` × `basis.len()` leading block in use.
    h: Array2<f64>,
    /// Unit residual direction and its coupling `A V = V H + f bᵀ`.
    f: Vec<f64>,
    b: Vec<f64>,
    matvecs: usize,
    rng: ChaCha8Rng,
    work: Vec<f64>,
}

impl<O: SymOperator + ?Sized> Krylov<'_, O> {
    fn apply_shifted(&mut self, x: &[f64]) -> Vec<f64> {
        self.op.apply(x, &mut self.work);
        self.matvecs += 1;
        x.iter()
            .zip(&self.work)
            .map(|(xi, mi)| self.shift * xi - mi)
            .collect()
    }

    /// Two rounds of Gram–Schmidt against locked and basis vectors; returns
    /// the accumulated coefficients on the basis.
    fn orthogonalize(&self, w: &mut [f64]) -> Vec<f64> {
        let mut coeffs = vec![0.0; self.basis.len()];
        for _ in 0..2 {
            for q in &self.locked {
                let c = dot(q, w);
                axpy(-c, q, w);
            }
            for (j, v) in self.basis.iter().enumerate() {
                let c = dot(v, w);
                axpy(-c, v, w);
                coeffs[j] += c;
            }
        }
        coeffs
    }

    /// A unit vector orthogonal to everything held, or `None` if the space is full.
    fn random_direction(&mut self) -> Option<Vec<f64>> {
        if self.locked.len() + self.basis.len() >= self.n {
            return None;
        }
        for _ in 0..8 {
            let mut w: Vec<f64> = (0..self.n).map(|_| self.rng.random::<f64>() - 0.5).collect();
            let before = norm(&w);
            self.orthogonalize(&mut w);
            let after = norm(&w);
            if after > 1e-6 * before {
                w.iter_mut().for_each(|x| *x /= after);
                return Some(w);
            }
        }
        None
    }

    /// Appends `v` as the next basis vector and runs one Lanczos step on it.
    fn push(&mut self, v: Vec<f64>) {
        let p = self.basis.len();
        let mut w = self.apply_shifted(&v);
        self.basis.push(v);
        let coeffs = self.orthogonalize(&mut w);
        for (i, &c) in coeffs.iter().enumerate() {
            self.h[[i, p]] = c;
            self.h[[p, i]] = c;
        }
        let beta = norm(&w);
        self.b = vec![0.0; p + 1];
        if beta > 1e-12 * self.scale {
            w.iter_mut().for_each(|x| *x /= beta);
            self.f = w;
            self.b[p] = beta;
        } else {
            // invariant subspace reached: continue from a fresh direction
            self.f = self.random_direction().unwrap_or_else(|| vec![0.0; self.n]);
        }
    }

    fn restart_fresh(&mut self) {
        self.basis.clear();
        if let Some(v) = self.random_direction() {
            self.push(v);
        }
    }

    fn ritz_vector(&self, s: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (v, &c) in self.basis.iter().zip(s) {
            axpy(c, v, &mut y);
        }
        let nrm = norm(&y);
        y.iter_mut().for_each(|x| *x /= nrm);
        y
    }

    fn kth_locked(&self, k: usize) -> f64 {
        if self.locked_theta.len() < k {
            return f64::NEG_INFINITY;
        }
        let mut t = self.locked_theta.clone();
        t.sort_by(|a, b| b.total_cmp(a));
        t[k - 1]
    }
}

/// The `k` smallest eigenpairs of a symmetric operator.
pub fn lanczos_smallest_op<O: SymOperator + ?Sized>(
    op: &O,
    k: usize,
    opts: &LanczosOptions,
) -> Result<EigenPairs> {
    let n = op.dim();
    if k == 0 || k > n {
        return Err(Error::Config(format!("requested {k} eigenpairs of a {n}x{n} operator")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Config(format!("lanczos tolerance {} must be positive", opts.tol)));
    }
    let shift = op.norm_bound().max(f64::MIN_POSITIVE);
    let scale = 2.0 * shift;
    let m_max = opts
        .basis_size
        .unwrap_or((2 * k + 20).max(k + 32))
        .clamp(2.min(n), n);
    let mut kr = Krylov {
        op,
        n,
        shift,
        scale,
        locked: Vec::new(),
        locked_theta: Vec::new(),
        basis: Vec::new(),
        h: Array2::zeros((m_max, m_max)),
        f: Vec::new(),
        b: Vec::new(),
        matvecs: 0,
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        work: vec![0.0; n],
    };
    let tol = opts.tol * scale;
    let mut start = vec![1.0; n];
    start[0] += 0.5;
    let nrm = norm(&start);
    start.iter_mut().for_each(|x| *x /= nrm);
    kr.push(start);
    let mut verified = false;
    loop {
        let m_cap = m_max.min(n - kr.locked.len());
        while kr.basis.len() < m_cap {
            let f = std::mem::take(&mut kr.f);
            if f.iter().all(|&x| x == 0.0) {
                break;
            }
            kr.push(f);
        }
        let p = kr.basis.len();
        let h = kr.h.slice(ndarray::s![..p, ..p]).to_owned();
        let (theta_asc, s_asc) = super::dense::symmetric_eigen(h.view());
        // descending order
        let theta: Vec<f64> = theta_asc.iter().rev().copied().collect();
        let s: Vec<Vec<f64>> = (0..p).rev().map(|c| s_asc.column(c).to_vec()).collect();
        let resid: Vec<f64> = s.iter().map(|si| dot(&kr.b, si).abs()).collect();

        let want = k.saturating_sub(kr.locked.len());
        let kth = kr.kth_locked(k);
        let mut lock_now = Vec::new();
        for i in 0..p {
            let wanted = i < want || theta[i] > kth + tol;
            if wanted && resid[i] <= tol {
                lock_now.push(i);
            }
        }
        for &i in &lock_now {
            let y = kr.ritz_vector(&s[i]);
            kr.locked.push(y);
            kr.locked_theta.push(theta[i]);
        }
        let space_full = kr.locked.len() >= n;
        let unlocked: Vec<usize> = (0..p).filter(|i| !lock_now.contains(i)).collect();
        if kr.locked.len() >= k {
            let kth = kr.kth_locked(k);
            let pending = unlocked.iter().any(|&i| theta[i] > kth + tol);
            if space_full || (!pending && (verified || p + kr.locked.len() >= n)) {
                break;
            }
            if !pending {
                verified = true;
                kr.restart_fresh();
                if kr.basis.is_empty() {
                    break;
                }
                continue;
            }
        }
        if kr.matvecs >= opts.max_iter {
            let worst = (0..p.min(want.max(1)))
                .filter(|i| !lock_now.contains(i))
                .map(|i| resid[i] / scale)
                .fold(0.0, f64::max);
            return Err(Error::Convergence {
                iterations: kr.matvecs,
                converged: kr.locked.len().min(k),
                wanted: k,
                residual: worst,
            });
        }
        // Krylov–Schur restart on the leading unlocked Ritz vectors
        let want_after = k.saturating_sub(kr.locked.len());
        let m_cap = m_max.min(n - kr.locked.len());
        let keep = (want_after + (m_cap.saturating_sub(want_after)) / 2)
            .max(1)
            .min(m_cap.saturating_sub(1).max(1))
            .min(unlocked.len());
        let kept: Vec<usize> = unlocked.into_iter().take(keep).collect();
        let new_basis: Vec<Vec<f64>> = kept.iter().map(|&i| kr.ritz_vector(&s[i])).collect();
        let new_b: Vec<f64> = kept.iter().map(|&i| dot(&kr.b, &s[i])).collect();
        kr.h.fill(0.0);
        for (j, &i) in kept.iter().enumerate() {
            kr.h[[j, j]] = theta[i];
        }
        kr.basis = new_basis;
        kr.b = new_b;
        if kr.basis.is_empty() {
            kr.restart_fresh();
        } else if !lock_now.is_empty() {
            // the residual direction must stay orthogonal to newly locked vectors
            let mut f = std::mem::take(&mut kr.f);
            for q in kr.locked.iter().rev().take(lock_now.len()) {
                let c = dot(q, &f);
                axpy(-c, q, &mut f);
            }
            let nf = norm(&f);
            if nf > 1e-8 {
                f.iter_mut().for_each(|x| *x /= nf);
                kr.f = f;
            } else {
                kr.f = kr.random_direction().unwrap_or_else(|| vec![0.0; n]);
                kr.b.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    let mut order: Vec<usize> = (0..kr.locked.len()).collect();
    order.sort_by(|&a, &b| kr.locked_theta[b].total_cmp(&kr.locked_theta[a]).then(a.cmp(&b)));
    order.truncate(k);
    let values = order.iter().map(|&i| shift - kr.locked_theta[i]).collect();
    let mut vectors = Array2::zeros((n, k));
    for (c, &i) in order.iter().enumerate() {
        for (r, &x) in kr.locked[i].iter().enumerate() {
            vectors[[r, c]] = x;
        }
    }
    Ok(EigenPairs { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::dense::symmetric_eigen;

    fn path_laplacian(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            let deg = if i == 0 || i + 1 == n { 1.0 } else { 2.0 };
            t.push((i, i, deg));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn path_graph_matches_dense() {
        let m = path_laplacian(120);
        let got = lanczos_smallest_op(&m, 6, &LanczosOptions::default()).unwrap();
        let (want, _) = symmetric_eigen(m.to_dense().view());
        for (a, b) in got.values.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn full_spectrum_on_tiny_matrix() {
        let m = path_laplacian(7);
        let got = lanczos_smallest_op(&m, 7, &LanczosOptions::default()).unwrap();
        let (want, _) = symmetric_eigen(m.to_dense().view());
        for (a, b) in got.values.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn identity_has_repeated_eigenvalue() {
        let eye = CsrMatrix::from_triplets(30, (0..30).map(|i| (i, i, 1.0)).collect());
        let got = lanczos_smallest_op(&eye, 4, &LanczosOptions::default()).unwrap();
        assert!(got.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let g = got.vectors.t().dot(&got.vectors);
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn disconnected_blocks_expose_zero_multiplicity() {
        let a = path_laplacian(25);
        let mut t = Vec::new();
        for i in 0..25 {
            for (j, v) in a.row(i) {
                t.push((i, j, v));
                t.push((i + 25, j + 25, v));
            }
        }
        let m = CsrMatrix::from_triplets(50, t);
        let got = lanczos_smallest_op(&m, 3, &LanczosOptions::default()).unwrap();
        assert!(got.values[0].abs() < 1e-10);
        assert!(got.values[1].abs() < 1e-10);
        assert!(got.values[2] > 1e-3);
    }

    #[test]
    fn iteration_cap_reports_convergence_error() {
        let m = path_laplacian(400);
        let opts = LanczosOptions {
            max_iter: 40,
            ..LanczosOptions::default()
        };
        match lanczos_smallest_op(&m, 10, &opts) {
            Err(Error::Convergence { wanted: 10, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
