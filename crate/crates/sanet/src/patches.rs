//! Regular-grid patch sampling over image or feature batches.
//!
//! Batches are `N × H × W × C` arrays. Patch vectors are flattened in
//! `(row, col, channel)` order with the channel index fastest, and patches
//! are scanned row-major over the grid. The flat index of the patch at grid
//! cell `(r, c)` of image `i` is `(i · m + r) · n + c`.

use ndarray::{s, Array1, Array2, Array4, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Patch size, stride and symmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchGeometry {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    #[serde(default)]
    pub pad_h: usize,
    #[serde(default)]
    pub pad_w: usize,
}

impl PatchGeometry {
    pub fn new(height: usize, width: usize, stride: usize) -> Self {
        PatchGeometry {
            height,
            width,
            stride,
            pad_h: 0,
            pad_w: 0,
        }
    }

    pub fn with_padding(mut self, pad_h: usize, pad_w: usize) -> Self {
        self.pad_h = pad_h;
        self.pad_w = pad_w;
        self
    }

    /// Grid dimensions `(m, n)` for an `in_h × in_w` input.
    pub fn grid(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        if self.height == 0 || self.width == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "patch {}x{} with stride {} must have positive sizes",
                self.height, self.width, self.stride
            )));
        }
        let (ph, pw) = (in_h + 2 * self.pad_h, in_w + 2 * self.pad_w);
        if self.height > ph || self.width > pw {
            return Err(Error::Config(format!(
                "patch {}x{} larger than padded input {ph}x{pw}",
                self.height, self.width
            )));
        }
        Ok((
            (ph - self.height) / self.stride + 1,
            (pw - self.width) / self.stride + 1,
        ))
    }
}

/// How patches are normalized after extraction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    None,
    /// Subtract the mean patch of the whole set.
    #[default]
    DatasetMean,
    /// Subtract each patch's own mean value.
    PerPatch,
}

/// All patches of a batch, one row per patch.
#[derive(Clone, Debug)]
pub struct PatchSet {
    pub data: Array2<f64>,
    pub images: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub channels: usize,
    pub geometry: PatchGeometry,
    pub centering: Centering,
}

impl PatchSet {
    pub fn per_image(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn flat_index(&self, image: usize, row: usize, col: usize) -> usize {
        (image * self.grid_rows + row) * self.grid_cols + col
    }

    /// Inverse of [`PatchSet::flat_index`].
    pub fn location(&self, flat: usize) -> (usize, usize, usize) {
        let per = self.per_image();
        let (image, rem) = (flat / per, flat % per);
        (image, rem / self.grid_cols, rem % self.grid_cols)
    }
}

/// Extracts every patch of every item in `batch`.
pub fn extract_patches(batch: ArrayView4<'_, f64>, geometry: PatchGeometry) -> Result<PatchSet> {
    let (n_img, h, w, ch) = batch.dim();
    let (m, n) = geometry.grid(h, w)?;
    let (gh, gw) = (geometry.height, geometry.width);
    let dim = gh * gw * ch;
    let mut data = Array2::<f64>::zeros((n_img * m * n, dim));
    let mut rows = data.axis_iter_mut(Axis(0));
    for img in batch.axis_iter(Axis(0)) {
        for gr in 0..m {
            for gc in 0..n {
                let mut row = rows.next().expect("row count matches grid");
                let top = (gr * geometry.stride) as isize - geometry.pad_h as isize;
                let left = (gc * geometry.stride) as isize - geometry.pad_w as isize;
                for pr in 0..gh {
                    let y = top + pr as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for pc in 0..gw {
                        let x = left + pc as isize;
                        if x < 0 || x >= w as isize {
                            continue;
                        }
                        let base = (pr * gw + pc) * ch;
                        row.slice_mut(s![base..base + ch])
                            .assign(&img.slice(s![y as usize, x as usize, ..]));
                    }
                }
            }
        }
    }
    Ok(PatchSet {
        data,
        images: n_img,
        grid_rows: m,
        grid_cols: n,
        channels: ch,
        geometry,
        centering: Centering::None,
    })
}

/// Subtracts the dataset-wide mean patch, returning the centered set.
pub fn center_patches(patches: PatchSet) -> PatchSet {
    apply_centering(patches, Centering::DatasetMean)
}

pub fn apply_centering(mut patches: PatchSet, mode: Centering) -> PatchSet {
    if patches.is_empty() {
        return patches;
    }
    match mode {
        Centering::None => {}
        Centering::DatasetMean => {
            let mean: Array1<f64> = patches.data.mean_axis(Axis(0)).expect("nonempty");
            patches.data -= &mean;
        }
        Centering::PerPatch => {
            for mut row in patches.data.axis_iter_mut(Axis(0)) {
                let mu = row.mean().unwrap_or(0.0);
                row -= mu;
            }
        }
    }
    patches.centering = mode;
    patches
}

/// Scatters patches back onto `N × H × W × C` canvases, averaging overlaps.
///
/// Returns the averaged batch and the per-pixel coverage count (same for
/// every image and channel). Pixels no patch touches stay zero with count 0.
pub fn reassemble(patches: &PatchSet, height: usize, width: usize) -> (Array4<f64>, Array2<usize>) {
    let g = patches.geometry;
    let ch = patches.channels;
    let mut out = Array4::<f64>::zeros((patches.images, height, width, ch));
    let mut count = Array2::<usize>::zeros((height, width));
    for flat in 0..patches.len() {
        let (img, gr, gc) = patches.location(flat);
        let row = patches.data.row(flat);
        let top = (gr * g.stride) as isize - g.pad_h as isize;
        let left = (gc * g.stride) as isize - g.pad_w as isize;
        for pr in 0..g.height {
            let y = top + pr as isize;
            if y < 0 || y >= height as isize {
                continue;
            }
            for pc in 0..g.width {
                let x = left + pc as isize;
                if x < 0 || x >= width as isize {
                    continue;
                }
                let base = (pr * g.width + pc) * ch;
                let (y, x) = (y as usize, x as usize);
                for c in 0..ch {
                    out[[img, y, x, c]] += row[base + c];
                }
                if img == 0 {
                    count[[y, x]] += 1;
                }
            }
        }
    }
    for img in 0..patches.images {
        for y in 0..height {
            for x in 0..width {
                let k = count[[y, x]];
                if k > 1 {
                    for c in 0..ch {
                        out[[img, y, x, c]] /= k as f64;
                    }
                }
            }
        }
    }
    (out, count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn ramp(n: usize, h: usize, w: usize, c: usize) -> Array4<f64> {
        Array::from_shape_fn((n, h, w, c), |(i, y, x, k)| {
            (i * 1000 + y * 100 + x * 3 + k) as f64
        })
    }

    #[test]
    fn mnist_first_layer_grid() {
        let geom = PatchGeometry::new(11, 11, 5).with_padding(4, 4);
        assert_eq!(geom.grid(28, 28).unwrap(), (6, 6));
        let batch = Array4::<f64>::zeros((2, 28, 28, 1));
        let p = extract_patches(batch.view(), geom).unwrap();
        assert_eq!(p.len(), 72);
        assert_eq!(p.data.ncols(), 121);
    }

    #[test]
    fn mnist_second_layer_grid() {
        let geom = PatchGeometry::new(4, 4, 1);
        assert_eq!(geom.grid(6, 6).unwrap(), (3, 3));
    }

    #[test]
    fn whole_image_patch_is_the_flattened_image() {
        let batch = ramp(1, 3, 4, 2);
        let p = extract_patches(batch.view(), PatchGeometry::new(3, 4, 1)).unwrap();
        assert_eq!(p.len(), 1);
        let flat: Vec<f64> = batch.iter().copied().collect();
        assert_eq!(p.data.row(0).to_vec(), flat);
    }

    #[test]
    fn padding_is_zero_and_scan_is_row_major() {
        let batch = Array4::<f64>::ones((1, 2, 2, 1));
        let p = extract_patches(batch.view(), PatchGeometry::new(2, 2, 1).with_padding(1, 1)).unwrap();
        assert_eq!((p.grid_rows, p.grid_cols), (3, 3));
        // top-left patch sees one real pixel in its bottom-right corner
        assert_eq!(p.data.row(0).to_vec(), vec![0.0, 0.0, 0.0, 1.0]);
        // top-right patch sees it in the bottom-left corner
        assert_eq!(p.data.row(2).to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(p.data.row(4).to_vec(), vec![1.0; 4]);
    }

    #[test]
    fn oversized_patch_is_rejected() {
        let g = PatchGeometry::new(5, 5, 1).with_padding(1, 1);
        assert!(matches!(g.grid(2, 2), Err(Error::Config(_))));
        assert!(g.grid(3, 3).is_ok());
    }

    #[test]
    fn centering_edge_cases() {
        let mk = |rows: Vec<Vec<f64>>| PatchSet {
            images: rows.len(),
            grid_rows: 1,
            grid_cols: 1,
            channels: 1,
            geometry: PatchGeometry::new(1, rows[0].len(), 1),
            centering: Centering::None,
            data: Array2::from_shape_vec(
                (rows.len(), rows[0].len()),
                rows.into_iter().flatten().collect(),
            )
            .unwrap(),
        };
        let sym = center_patches(mk(vec![vec![1.0, -2.0], vec![-1.0, 2.0]]));
        assert_eq!(sym.data, ndarray::arr2(&[[1.0, -2.0], [-1.0, 2.0]]));
        let constant = center_patches(mk(vec![vec![0.5, 3.0]; 4]));
        assert!(constant.data.iter().all(|&v| v == 0.0));
        let per = apply_centering(mk(vec![vec![1.0, 3.0]]), Centering::PerPatch);
        assert_eq!(per.data.row(0).to_vec(), vec![-1.0, 1.0]);
    }

    #[test]
    fn flat_index_round_trips() {
        let p = extract_patches(ramp(3, 6, 6, 1).view(), PatchGeometry::new(4, 4, 1)).unwrap();
        for flat in 0..p.len() {
            let (i, r, c) = p.location(flat);
            assert_eq!(p.flat_index(i, r, c), flat);
        }
    }
}
