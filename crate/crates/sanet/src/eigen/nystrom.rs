//! Nyström extension for dense affinities.
//!
//! With `C = K[:, L]` the kernel between all points and a landmark set `L`
//! and `A = K[L, L]`, the affinity is approximated by `K̂ = C A⁺ Cᵀ`. Degrees
//! come from `K̂ 1`, the normalized kernel is `D̂^{-1/2} K̂ D̂^{-1/2}`, and its
//! leading eigenvectors are obtained in one shot: with
//! `S = A^{-1/2} ĈᵀĈ A^{-1/2} = U Λ Uᵀ`, the columns of
//! `V = Ĉ A^{-1/2} U Λ^{-1/2}` are orthonormal eigenvectors of the
//! approximation with eigenvalues `Λ`. Laplacian eigenvalues are `1 − Λ`.
//!
//! The kernel includes the unit self-similarity on its diagonal, so every
//! approximate degree is clamped below by 1.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{symmetric_eigen, SolverTag, SpectralEmbedding};
use crate::distance::PointCloud;
use crate::error::{Error, Result};
use crate::graph::{local_scales, AffinityScheme};
use crate::laplacian::LaplacianKind;

/// Approximate `k` smallest eigenvectors of a normalized Laplacian of a
/// dense affinity from `ceil(sample_fraction · n)` random landmarks.
pub fn nystrom_embedding(
    points: ArrayView2<'_, f64>,
    scheme: &AffinityScheme,
    kind: LaplacianKind,
    k: usize,
    sample_fraction: f64,
    seed: u64,
) -> Result<SpectralEmbedding> {
    nystrom_in(&PointCloud::new(points), scheme, kind, k, sample_fraction, seed)
}

pub fn nystrom_in(
    cloud: &PointCloud<'_>,
    scheme: &AffinityScheme,
    kind: LaplacianKind,
    k: usize,
    sample_fraction: f64,
    seed: u64,
) -> Result<SpectralEmbedding> {
    scheme.validate()?;
    if !scheme.is_dense() {
        return Err(Error::Config(format!(
            "nystrom needs a dense affinity, got {}",
            scheme.label()
        )));
    }
    if !kind.is_normalized() {
        return Err(Error::Config("nystrom approximates normalized Laplacians only".into()));
    }
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "nystrom sample_fraction {sample_fraction} must lie in (0, 1]"
        )));
    }
    let n = cloud.len();
    let m = ((sample_fraction * n as f64).ceil() as usize).min(n);
    if m < k || k == 0 {
        return Err(Error::Config(format!(
            "{m} landmarks cannot yield {k} eigenvectors"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut landmarks = rand::seq::index::sample(&mut rng, n, m).into_vec();
    landmarks.sort_unstable();

    let mut c = cloud.sq_dists_to(&landmarks);
    match scheme {
        AffinityScheme::Gaussian { sigma } => {
            let denom = 2.0 * sigma * sigma;
            c.mapv_inplace(|d2| (-d2 / denom).exp());
        }
        AffinityScheme::SelfTuning {
            k_local,
            merge_duplicates,
        } => {
            let scales = local_scales(cloud, *k_local, *merge_duplicates)?;
            for (i, mut row) in c.axis_iter_mut(Axis(0)).enumerate() {
                for (j, x) in row.iter_mut().enumerate() {
                    *x = (-*x / (scales[i] * scales[landmarks[j]])).exp();
                }
            }
        }
        _ => unreachable!("sparse schemes rejected above"),
    }
    let mut a = c.select(Axis(0), &landmarks);
    symmetrize(&mut a);

    let a_pinv = pseudo_power(&a, -1.0);
    let col_sums = c.sum_axis(Axis(0));
    let degrees: Array1<f64> = c.dot(&a_pinv.dot(&col_sums)).mapv(|d| d.max(1.0));
    let inv_sqrt = degrees.mapv(|d| 1.0 / d.sqrt());
    for (i, mut row) in c.axis_iter_mut(Axis(0)).enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x *= inv_sqrt[i] * inv_sqrt[landmarks[j]];
        }
    }
    let mut a_hat = c.select(Axis(0), &landmarks);
    symmetrize(&mut a_hat);
    let a_isqrt = pseudo_power(&a_hat, -0.5);
    let mut s = a_isqrt.dot(&c.t().dot(&c)).dot(&a_isqrt);
    symmetrize(&mut s);
    let (lam, u) = symmetric_eigen(s.view());
    // the k largest, descending
    let top: Vec<usize> = (0..m).rev().take(k).collect();
    let lam_top: Vec<f64> = top.iter().map(|&i| lam[i]).collect();
    let floor = lam[m - 1].abs().max(1.0) * 1e-12;
    let proj = Array2::from_shape_fn((m, k), |(r, j)| {
        let l = lam_top[j].max(floor);
        u[[r, top[j]]] / l.sqrt()
    });
    let mut v = c.dot(&a_isqrt.dot(&proj));
    if kind == LaplacianKind::RandomWalk {
        for (mut row, s) in v.axis_iter_mut(Axis(0)).zip(&inv_sqrt) {
            row.mapv_inplace(|x| x * s);
        }
        // random-walk eigenvectors are D-orthogonal, so only their lengths are fixed
        for mut col in v.columns_mut() {
            let nrm = col.dot(&col).sqrt();
            col.mapv_inplace(|x| x / nrm);
        }
    } else {
        orthonormalize_columns(&mut v);
    }
    let eigenvalues = lam_top.iter().map(|l| 1.0 - l).collect();
    Ok(SpectralEmbedding::canonical(v, eigenvalues, Some(kind), SolverTag::Nystrom))
}

fn symmetrize(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
}

/// `M^p` of a symmetric positive semidefinite matrix over its numerically
/// nonzero spectrum.
fn pseudo_power(m: &Array2<f64>, p: f64) -> Array2<f64> {
    let (values, vectors) = symmetric_eigen(m.view());
    let top = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cutoff = top * 1e-10;
    let scaled = Array2::from_shape_fn(vectors.dim(), |(r, c)| {
        if values[c] > cutoff {
            vectors[[r, c]] * values[c].powf(p)
        } else {
            0.0
        }
    });
    scaled.dot(&vectors.t())
}

/// Two passes of modified Gram–Schmidt over the columns.
fn orthonormalize_columns(v: &mut Array2<f64>) {
    let k = v.ncols();
    for _ in 0..2 {
        for j in 0..k {
            for i in 0..j {
                let c = v.column(i).dot(&v.column(j));
                let qi = v.column(i).to_owned();
                v.column_mut(j).scaled_add(-c, &qi);
            }
            let nrm = v.column(j).dot(&v.column(j)).sqrt();
            if nrm > 0.0 {
                v.column_mut(j).mapv_inplace(|x| x / nrm);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Array2<f64> {
        Array2::from_shape_fn((40, 2), |(i, d)| {
            let base = if i < 20 { 0.0 } else { 10.0 };
            base + ((i * 7 + d * 3) % 11) as f64 * 0.05
        })
    }

    #[test]
    fn landmark_count_below_k_is_config_error() {
        let p = blobs();
        let r = nystrom_embedding(p.view(), &AffinityScheme::gaussian(1.0), LaplacianKind::Symmetric, 9, 0.2, 1);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn columns_are_orthonormal() {
        let p = blobs();
        let e = nystrom_embedding(p.view(), &AffinityScheme::gaussian(1.0), LaplacianKind::Symmetric, 3, 0.5, 7)
            .unwrap();
        let g = e.vectors.t().dot(&e.vectors);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < 1e-8);
            }
        }
        assert!(e.eigenvalues[0].abs() < 1e-6);
        assert!(e.eigenvalues[1].abs() < 1e-6);
    }

    #[test]
    fn sparse_scheme_is_rejected() {
        let p = blobs();
        let r = nystrom_embedding(p.view(), &AffinityScheme::knn(3), LaplacianKind::Symmetric, 2, 0.5, 1);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
