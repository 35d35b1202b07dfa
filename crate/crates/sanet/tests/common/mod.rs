#![allow(dead_code)]

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use sanet::sparse::CsrMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two concentric noisy circles with radii 1 and 3, half the points each.
pub fn rings(n: usize, noise: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = rng(seed);
    let normal = Normal::new(0.0, noise).unwrap();
    let mut points = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = usize::from(i >= n / 2);
        let radius = if class == 0 { 1.0 } else { 3.0 };
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        points[[i, 0]] = radius * t.cos() + normal.sample(&mut rng);
        points[[i, 1]] = radius * t.sin() + normal.sample(&mut rng);
        labels.push(class);
    }
    (points, labels)
}

/// Isotropic Gaussian blobs around the given centers, `per` points each.
pub fn blobs(centers: &[[f64; 2]], per: usize, spread: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = rng(seed);
    let normal = Normal::new(0.0, spread).unwrap();
    let n = centers.len() * per;
    let mut points = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for j in 0..per {
            let i = c * per + j;
            points[[i, 0]] = center[0] + normal.sample(&mut rng);
            points[[i, 1]] = center[1] + normal.sample(&mut rng);
            labels.push(c);
        }
    }
    (points, labels)
}

/// Unnormalized Laplacian of an Erdős–Rényi graph with uniform weights in (0, 1].
pub fn random_laplacian(n: usize, density: f64, rng: &mut ChaCha8Rng) -> CsrMatrix {
    let mut triplets = Vec::new();
    let mut degree = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(density) {
                let w = 1.0 - rng.random::<f64>();
                triplets.push((i, j, -w));
                triplets.push((j, i, -w));
                degree[i] += w;
                degree[j] += w;
            }
        }
    }
    for (i, d) in degree.into_iter().enumerate() {
        triplets.push((i, i, d));
    }
    CsrMatrix::from_triplets(n, triplets)
}

/// Writes an IDX image file and its label file.
pub fn write_idx(images: &Path, labels: &Path, rows: usize, cols: usize, pixels: &[Vec<u8>], classes: &[u8]) {
    let mut out = Vec::new();
    out.extend_from_slice(&0x0803u32.to_be_bytes());
    out.extend_from_slice(&(pixels.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for p in pixels {
        assert_eq!(p.len(), rows * cols);
        out.extend_from_slice(p);
    }
    fs::write(images, out).unwrap();
    let mut out = Vec::new();
    out.extend_from_slice(&0x0801u32.to_be_bytes());
    out.extend_from_slice(&(classes.len() as u32).to_be_bytes());
    out.extend_from_slice(classes);
    fs::write(labels, out).unwrap();
}

/// Synthetic digit-like images: each class is a bright bar at its own
/// angle plus pixel noise.
pub fn bar_images(count: usize, classes: usize, size: usize, seed: u64) -> (Vec<Vec<u8>>, Vec<u8>) {
    let mut rng = rng(seed);
    let mut pixels = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let mid = (size as f64 - 1.0) / 2.0;
    for i in 0..count {
        let class = i % classes;
        let angle = std::f64::consts::PI * class as f64 / classes as f64 + rng.random_range(-0.1..0.1);
        let (s, c) = angle.sin_cos();
        let mut img = vec![0u8; size * size];
        for r in 0..size {
            for col in 0..size {
                let (y, x) = (r as f64 - mid, col as f64 - mid);
                let dist = (x * s - y * c).abs();
                let v: f64 = if dist < size as f64 / 10.0 && (x * c + y * s).abs() < mid * 0.8 {
                    220.0
                } else {
                    0.0
                };
                let noisy = v + rng.random_range(0.0..30.0);
                img[r * size + col] = noisy.min(255.0) as u8;
            }
        }
        pixels.push(img);
        labels.push(class as u8);
    }
    (pixels, labels)
}

/// One subdirectory per class of PNG files with a class-specific blob.
pub fn write_image_dir(root: &Path, classes: usize, per_class: usize, height: u32, width: u32, rgb: bool, seed: u64) {
    let mut rng = rng(seed);
    for class in 0..classes {
        let dir = root.join(format!("class{class}"));
        fs::create_dir_all(&dir).unwrap();
        let cy = (class as f64 + 0.5) / classes as f64 * height as f64;
        for j in 0..per_class {
            let cx = rng.random_range(0.3..0.7) * width as f64;
            let radius = (height.min(width) as f64) / 5.0;
            let tint = [class as f64 / classes as f64, 0.5, 1.0 - class as f64 / classes as f64];
            let path = dir.join(format!("img{j:03}.png"));
            let shade = |x: u32, y: u32, rng: &mut ChaCha8Rng| {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                let base = if d < radius { 200.0 } else { 30.0 };
                base + rng.random_range(0.0..25.0)
            };
            if rgb {
                let img = image::RgbImage::from_fn(width, height, |x, y| {
                    let v = shade(x, y, &mut rng);
                    image::Rgb(tint.map(|t| (v * (0.4 + 0.6 * t)).min(255.0) as u8))
                });
                img.save(&path).unwrap();
            } else {
                let img = image::GrayImage::from_fn(width, height, |x, y| {
                    image::Luma([shade(x, y, &mut rng).min(255.0) as u8])
                });
                img.save(&path).unwrap();
            }
        }
    }
}

pub fn mnist_fixture() -> (std::path::PathBuf, std::path::PathBuf) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    (dir.join("mnist-1k-images.idx"), dir.join("mnist-1k-labels.idx"))
}
