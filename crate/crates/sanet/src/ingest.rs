//! Dataset loading.
//!
//! Images are held as `height × width × channels` arrays of `f64` in `[0, 1]`.
//! Ground-truth labels travel alongside the images in [`LabeledDataset`] but
//! the feature pipeline only ever receives `&[Image]`; labels are consumed by
//! metric evaluation alone.

use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::{Array3, Array4, ArrayView3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// One image with pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pixels: Array3<f64>,
}

impl Image {
    /// Wraps a `height × width × channels` array, rejecting empty shapes and
    /// values outside `[0, 1]`.
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        if pixels.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Input("pixel values must be finite and within [0, 1]".into()));
        }
        if pixels.shape().iter().any(|&d| d == 0) {
            return Err(Error::Input(format!("empty image shape {:?}", pixels.shape())));
        }
        Ok(Image { pixels })
    }

    /// Single-channel image from row-major bytes, scaling 0..=255 to [0, 1].
    pub fn from_gray_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != height * width {
            return Err(Error::Input(format!(
                "expected {} bytes for a {height}x{width} image, got {}",
                height * width,
                bytes.len()
            )));
        }
        let pixels = Array3::from_shape_fn((height, width, 1), |(r, c, _)| {
            f64::from(bytes[r * width + c]) / 255.0
        });
        Ok(Image { pixels })
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn pixels(&self) -> ArrayView3<'_, f64> {
        self.pixels.view()
    }
}

/// Stacks same-shaped images into an `N × H × W × C` batch.
pub fn stack_images(images: &[Image]) -> Result<Array4<f64>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Input("no images to stack".into()))?;
    let (h, w, c) = (first.height(), first.width(), first.channels());
    let mut batch = Array4::zeros((images.len(), h, w, c));
    for (i, img) in images.iter().enumerate() {
        if img.pixels.dim() != (h, w, c) {
            return Err(Error::Consistency(format!(
                "image {i} has shape {:?}, expected {:?}",
                img.pixels.shape(),
                [h, w, c]
            )));
        }
        batch.index_axis_mut(ndarray::Axis(0), i).assign(&img.pixels);
    }
    Ok(batch)
}

/// Images plus optional ground-truth labels.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub images: Vec<Image>,
    pub labels: Option<Vec<usize>>,
    /// Number of classes (`max label + 1`), or 0 when unlabeled.
    pub class_count: usize,
    /// Files that could not be decoded and were skipped (directory loader only).
    pub skipped: usize,
}

impl LabeledDataset {
    pub fn new(images: Vec<Image>, labels: Option<Vec<usize>>) -> Result<Self> {
        let class_count = match &labels {
            Some(l) => {
                if l.len() != images.len() {
                    return Err(Error::Consistency(format!(
                        "{} images but {} labels",
                        images.len(),
                        l.len()
                    )));
                }
                l.iter().max().map_or(0, |m| m + 1)
            }
            None => 0,
        };
        Ok(LabeledDataset {
            images,
            labels,
            class_count,
            skipped: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Draws `size` images with a fixed seed.
    ///
    /// With labels present the draw is stratified: each class contributes
    /// `size / k` images (the remainder goes to the lowest class ids), and the
    /// result is shuffled. Without labels it is a plain uniform draw. Requests
    /// at or above the dataset size return a clone.
    pub fn subsample(&self, size: usize, seed: u64) -> Result<LabeledDataset> {
        if size == 0 {
            return Err(Error::Config("subsample size must be positive".into()));
        }
        if size >= self.len() {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = match &self.labels {
            Some(labels) => {
                let k = self.class_count;
                let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
                for (i, &l) in labels.iter().enumerate() {
                    by_class[l].push(i);
                }
                let mut out = Vec::with_capacity(size);
                for (class, members) in by_class.iter_mut().enumerate() {
                    let quota = size / k + usize::from(class < size % k);
                    if quota > members.len() {
                        return Err(Error::Input(format!(
                            "class {class} has {} images, balanced subsample needs {quota}",
                            members.len()
                        )));
                    }
                    members.shuffle(&mut rng);
                    out.extend_from_slice(&members[..quota]);
                }
                out
            }
            None => rand::seq::index::sample(&mut rng, self.len(), size).into_vec(),
        };
        picked.shuffle(&mut rng);
        let images = picked.iter().map(|&i| self.images[i].clone()).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| picked.iter().map(|&i| l[i]).collect());
        let mut out = LabeledDataset::new(images, labels)?;
        out.class_count = self.class_count;
        Ok(out)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

/// Parses an IDX image file (magic `0x00000803`) into grayscale images.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<Vec<Image>> {
    let mut cur = Cursor::new(bytes);
    let short = |_| Error::format(path, "file shorter than the IDX header");
    let magic = cur.read_u32::<BigEndian>().map_err(short)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic number {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = cur.read_u32::<BigEndian>().map_err(short)? as usize;
    let rows = cur.read_u32::<BigEndian>().map_err(short)? as usize;
    let cols = cur.read_u32::<BigEndian>().map_err(short)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::format(path, format!("degenerate image shape {rows}x{cols}")));
    }
    let body = &bytes[16..];
    let per_image = rows * cols;
    let needed = count
        .checked_mul(per_image)
        .ok_or_else(|| Error::format(path, "header sizes overflow"))?;
    if body.len() < needed {
        return Err(Error::format(
            path,
            format!(
                "header promises {count} images of {rows}x{cols} ({needed} bytes) but only {} bytes follow",
                body.len()
            ),
        ));
    }
    body[..needed]
        .chunks_exact(per_image)
        .map(|chunk| Image::from_gray_bytes(rows, cols, chunk))
        .collect()
}

/// Parses an IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    let mut cur = Cursor::new(bytes);
    let short = |_| Error::format(path, "file shorter than the IDX header");
    let magic = cur.read_u32::<BigEndian>().map_err(short)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic number {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let count = cur.read_u32::<BigEndian>().map_err(short)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::format(
            path,
            format!("header promises {count} labels but only {} bytes follow", body.len()),
        ));
    }
    Ok(body[..count].iter().map(|&b| usize::from(b)).collect())
}

/// Loads an IDX image file and, optionally, its label file.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<LabeledDataset> {
    let images = parse_idx_images(images_path, &read_file(images_path)?)?;
    let labels = match labels_path {
        Some(p) => Some(parse_idx_labels(p, &read_file(p)?)?),
        None => None,
    };
    LabeledDataset::new(images, labels)
}

fn is_image_file(path: &Path) -> bool {
    const EXTS: [&str; 7] = ["png", "pgm", "ppm", "pnm", "pbm", "jpg", "jpeg"];
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort();
    Ok(entries)
}

/// Loads a `root/<class>/<image>` tree.
///
/// Classes are the subdirectories in lexicographic order; files inside each
/// are read in lexicographic order and resized to `target_size`
/// (`(height, width)`). Files with an image extension that fail to decode are
/// counted in [`LabeledDataset::skipped`].
pub fn load_image_directory(
    root: &Path,
    target_size: (usize, usize),
    grayscale: bool,
) -> Result<LabeledDataset> {
    let (th, tw) = target_size;
    if th == 0 || tw == 0 {
        return Err(Error::Config(format!("target size {th}x{tw} must be positive")));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut skipped = 0;
    for (label, dir) in class_dirs.iter().enumerate() {
        for file in sorted_entries(dir)?.into_iter().filter(|p| is_image_file(p)) {
            let decoded = match image::open(&file) {
                Ok(img) => img,
                Err(err) => {
                    log::warn!("skipping {}: {err}", file.display());
                    skipped += 1;
                    continue;
                }
            };
            let resized = decoded.resize_exact(
                tw as u32,
                th as u32,
                image::imageops::FilterType::Triangle,
            );
            let pixels = if grayscale {
                let g = resized.to_luma8();
                Array3::from_shape_fn((th, tw, 1), |(r, c, _)| {
                    f64::from(g.get_pixel(c as u32, r as u32)[0]) / 255.0
                })
            } else {
                let rgb = resized.to_rgb8();
                Array3::from_shape_fn((th, tw, 3), |(r, c, ch)| {
                    f64::from(rgb.get_pixel(c as u32, r as u32)[ch]) / 255.0
                })
            };
            images.push(Image { pixels });
            labels.push(label);
        }
    }
    if images.is_empty() {
        return Err(Error::Input(format!(
            "no decodable images under {}",
            root.display()
        )));
    }
    let mut ds = LabeledDataset::new(images, Some(labels))?;
    ds.class_count = class_dirs.len();
    ds.skipped = skipped;
    Ok(ds)
}
