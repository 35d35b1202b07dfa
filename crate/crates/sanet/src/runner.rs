//! End-to-end runs: load, forward, cluster, evaluate, write artifacts.
//!
//! A run writes into its output directory:
//!
//! * `metrics.json`: `{acc, nmi, k, n, confusion}` of the SANet features
//! * `config.toml`: the resolved configuration
//! * `features.bin` + `features.json`: the feature matrix as row-major
//!   little-endian `f32` and its shape
//! * `run.json`: feature shape and any procedures the guardrail skipped
//! * `patterns.png` when `output.pattern_centers` is set
//! * `baseline.json` when `output.raw_baseline` is set: the same metrics for
//!   k-means on raw pixels
//!
//! Nothing in these files depends on timing, so equal configs give equal
//! bytes. If a run fails, the files it created are removed again.

use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, WriteBytesExt};
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use log::info;
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans, MetricReport};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::ingest::{stack_images, LabeledDataset};
use crate::network::{forward, spectral_layer, SkippedProcedure};
use crate::patches::{extract_patches, PatchSet};

/// Overrides applied on top of a loaded config.
#[derive(Clone, Debug, Default)]
pub struct RunOverrides {
    pub subsample: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunOverrides {
    pub fn apply(&self, config: &mut PipelineConfig) {
        if let Some(n) = self.subsample {
            config.dataset.subsample = Some(n);
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(o) = &self.out {
            config.output.dir = o.clone();
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunInfo {
    pub images: usize,
    pub feature_dim: usize,
    pub skipped: Vec<SkippedProcedure>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub metrics: MetricReport,
    pub baseline: Option<MetricReport>,
    pub info: RunInfo,
    pub out_dir: PathBuf,
}

/// Files written so far, removed again unless the run completes.
struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
    done: bool,
}

impl Outputs {
    fn open(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
            done: false,
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.done {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(value).map_err(|e| Error::Consistency(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

/// Pixels of every image flattened into one row each.
pub fn raw_pixel_matrix(data: &LabeledDataset) -> Result<Array2<f64>> {
    let batch = stack_images(&data.images)?;
    let n = batch.dim().0;
    let d = batch.len() / n.max(1);
    Ok(batch
        .into_shape_with_order((n, d))
        .map_err(|e| Error::Consistency(e.to_string()))?)
}

/// Clusters `features` into the dataset's class count and scores the result.
pub fn cluster_and_score(
    config: &PipelineConfig,
    features: ArrayView2<'_, f64>,
    data: &LabeledDataset,
) -> Result<MetricReport> {
    let truth = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config("the dataset has no labels to cluster against".into()))?;
    let k = data.class_count;
    let result = kmeans(features, k, &config.kmeans, config.seed_for("kmeans"))?;
    MetricReport::evaluate(&result.labels, truth, k)
}

/// Loads and validates; the dataset is returned for reuse.
pub fn validate(config: &PipelineConfig) -> Result<LabeledDataset> {
    config.validate_static()?;
    let data = config.load_dataset().map_err(|e| e.context("ingest"))?;
    config.validate_with(&data)?;
    Ok(data)
}

/// Runs the whole pipeline and writes the artifacts.
pub fn run(config: &PipelineConfig) -> Result<RunSummary> {
    let data = validate(config)?;
    let mut out = Outputs::open(&config.output.dir)?;
    let batch = stack_images(&data.images)?;
    info!("forward pass over {} images", data.len());
    let keep = config.output.pattern_centers.is_some();
    let fwd = forward(batch.view(), &config.network, &config.network_options(), keep)
        .map_err(|e| e.context("network"))?;
    let metrics = cluster_and_score(config, fwd.features.view(), &data).map_err(|e| e.context("cluster"))?;
    info!("acc {:.4} nmi {:.4}", metrics.acc, metrics.nmi);

    out.write("metrics.json", &to_json(&metrics)?)?;
    let mut resolved = config.clone();
    resolved.base_dir = None;
    out.write("config.toml", resolved.to_toml()?.as_bytes())?;
    write_features(&mut out, fwd.features.view())?;
    let info = RunInfo {
        images: data.len(),
        feature_dim: fwd.features.ncols(),
        skipped: fwd.skipped.clone(),
    };
    out.write("run.json", &to_json(&info)?)?;

    if let Some(centers) = config.output.pattern_centers {
        let first = &fwd.layers[0];
        let raw = extract_patches(batch.view(), first.patches.geometry)?;
        let features = first_layer_rows(&first.features.data);
        let grid = pattern_grid(config, features.view(), &raw, centers)?;
        let p = out.path("patterns.png");
        grid.save(&p)?;
    }

    let baseline = if config.output.raw_baseline {
        let raw = raw_pixel_matrix(&data)?;
        let b = cluster_and_score(config, raw.view(), &data).map_err(|e| e.context("baseline"))?;
        info!("raw-pixel baseline: acc {:.4} nmi {:.4}", b.acc, b.nmi);
        out.write("baseline.json", &to_json(&b)?)?;
        Some(b)
    } else {
        None
    };
    out.done = true;
    Ok(RunSummary {
        metrics,
        baseline,
        info,
        out_dir: out.dir.clone(),
    })
}

fn write_features(out: &mut Outputs, features: ArrayView2<'_, f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(features.len() * 4);
    for &v in features.iter() {
        bytes.write_f32::<LittleEndian>(v as f32).expect("writing to a vector");
    }
    out.write("features.bin", &bytes)?;
    let shape = serde_json::json!({
        "rows": features.nrows(),
        "cols": features.ncols(),
        "dtype": "f32",
        "byte_order": "little",
        "layout": "row_major",
    });
    out.write("features.json", &to_json(&shape)?)
}

fn first_layer_rows(data: &ndarray::Array4<f64>) -> Array2<f64> {
    let (n, m, g, d) = data.dim();
    data.to_shape((n * m * g, d)).expect("contiguous").into_owned()
}

/// A pattern grid image in memory.
pub enum PatternImage {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl PatternImage {
    pub fn dimensions(&self) -> (u32, u32) {
        match self {
            PatternImage::Gray(g) => g.dimensions(),
            PatternImage::Rgb(g) => g.dimensions(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let r = match self {
            PatternImage::Gray(g) => g.save(path),
            PatternImage::Rgb(g) => g.save(path),
        };
        r.map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Tile magnification of pattern grids.
pub const TILE_SCALE: u32 = 4;
const TILE_GAP: u32 = 2;

/// Clusters the first-layer spectral features of all patches into
/// `centers` groups and tiles, for each center, the raw patch whose
/// features lie nearest to it.
pub fn pattern_grid(
    config: &PipelineConfig,
    features: ArrayView2<'_, f64>,
    raw: &PatchSet,
    centers: usize,
) -> Result<PatternImage> {
    let n = features.nrows();
    if centers == 0 || centers > n {
        return Err(Error::Config(format!(
            "{centers} pattern centers requested from {n} patches"
        )));
    }
    let result = kmeans(features, centers, &config.kmeans, config.seed_for("patterns"))?;
    let nearest: Vec<usize> = result
        .centers
        .axis_iter(Axis(0))
        .map(|c| {
            let mut best = (f64::INFINITY, 0);
            for (i, row) in features.axis_iter(Axis(0)).enumerate() {
                let d: f64 = row.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, i);
                }
            }
            best.1
        })
        .collect();
    let (ph, pw, ch) = (raw.geometry.height, raw.geometry.width, raw.channels);
    let cols = (centers as f64).sqrt().ceil() as u32;
    let rows = (centers as u32).div_ceil(cols);
    let tile_h = ph as u32 * TILE_SCALE;
    let tile_w = pw as u32 * TILE_SCALE;
    let width = cols * tile_w + (cols + 1) * TILE_GAP;
    let height = rows * tile_h + (rows + 1) * TILE_GAP;
    let pixel = |patch: usize, y: u32, x: u32, c: usize| -> u8 {
        let (py, px) = ((y / TILE_SCALE) as usize, (x / TILE_SCALE) as usize);
        let v = raw.data[[patch, (py * pw + px) * ch + c]];
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    };
    let place = |t: usize| -> (u32, u32) {
        let (r, c) = (t as u32 / cols, t as u32 % cols);
        (TILE_GAP + r * (tile_h + TILE_GAP), TILE_GAP + c * (tile_w + TILE_GAP))
    };
    if ch == 3 {
        let mut img: RgbImage = ImageBuffer::new(width, height);
        for (t, &p) in nearest.iter().enumerate() {
            let (oy, ox) = place(t);
            for y in 0..tile_h {
                for x in 0..tile_w {
                    img.put_pixel(ox + x, oy + y, Rgb([pixel(p, y, x, 0), pixel(p, y, x, 1), pixel(p, y, x, 2)]));
                }
            }
        }
        Ok(PatternImage::Rgb(img))
    } else {
        let mut img: GrayImage = ImageBuffer::new(width, height);
        for (t, &p) in nearest.iter().enumerate() {
            let (oy, ox) = place(t);
            for y in 0..tile_h {
                for x in 0..tile_w {
                    img.put_pixel(ox + x, oy + y, Luma([pixel(p, y, x, 0)]));
                }
            }
        }
        Ok(PatternImage::Gray(img))
    }
}

/// Runs the first layer only and writes `patterns.png` with `centers` tiles.
pub fn visualize_patterns(config: &PipelineConfig, centers: usize) -> Result<PathBuf> {
    let data = validate(config)?;
    let batch = stack_images(&data.images)?;
    let layer = spectral_layer(batch.view(), &config.network.layers[0], 0, &config.network_options())
        .map_err(|e| e.context("network"))?;
    let raw = extract_patches(batch.view(), layer.patches.geometry)?;
    let rows = first_layer_rows(&layer.features.data);
    let grid = pattern_grid(config, rows.view(), &raw, centers)?;
    let mut out = Outputs::open(&config.output.dir)?;
    let p = out.path("patterns.png");
    grid.save(&p)?;
    out.done = true;
    Ok(p)
}
