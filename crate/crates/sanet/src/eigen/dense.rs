use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Full symmetric eigendecomposition: eigenvalues ascending, eigenvectors
/// as the columns of the returned matrix.
pub fn symmetric_eigen(m: ArrayView2<'_, f64>) -> (Vec<f64>, Array2<f64>) {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let eig = SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Checks `|m_ij − m_ji| ≤ 1e-10 · max(1, max |m|)`.
pub fn check_symmetric(m: ArrayView2<'_, f64>) -> Result<()> {
    let (r, c) = m.dim();
    if r != c {
        return Err(Error::Contract(format!("matrix is {r}x{c}, not square")));
    }
    let scale = m.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    for i in 0..r {
        for j in 0..i {
            if (m[[i, j]] - m[[j, i]]).abs() > 1e-10 * scale {
                return Err(Error::Contract(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    m[[i, j]],
                    m[[j, i]]
                )));
            }
        }
    }
    Ok(())
}
