//! Declarative run configuration.
//!
//! A [`PipelineConfig`] is a TOML document describing the dataset, the
//! network, the final k-means and where outputs go. Relative dataset paths
//! are resolved against the directory of the config file; configs that do
//! not come from a file (presets, strings) resolve them against the working
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::KMeansOptions;
use crate::eigen::SolverSpec;
use crate::error::{Error, Result};
use crate::graph::AffinityScheme;
use crate::ingest::{load_idx, load_image_directory, LabeledDataset};
use crate::laplacian::IsolatedPolicy;
use crate::network::{guardrail_violation, Guardrail, NetworkOptions, NetworkSpec, OnExceed};
use crate::seed::derive_seed;

/// Names of the bundled presets.
pub const PRESETS: [&str; 4] = ["mnist-default", "usps-default", "ar-default", "fashion-default"];

fn preset_text(name: &str) -> Option<&'static str> {
    match name {
        "mnist-default" => Some(include_str!("../presets/mnist-default.toml")),
        "usps-default" => Some(include_str!("../presets/usps-default.toml")),
        "ar-default" => Some(include_str!("../presets/ar-default.toml")),
        "fashion-default" => Some(include_str!("../presets/fashion-default.toml")),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// IDX image file with an optional IDX label file.
    Idx {
        images: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
    },
    /// One subdirectory per class, images resized to `height × width`.
    ImageDir {
        root: PathBuf,
        height: usize,
        width: usize,
        #[serde(default = "default_true")]
        grayscale: bool,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(flatten)]
    pub source: DatasetSource,
    /// Class-balanced random subsample of this many images.
    #[serde(default)]
    pub subsample: Option<usize>,
}

/// Per-procedure spectral settings that are not part of a procedure spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    #[serde(default)]
    pub isolated: IsolatedPolicy,
    /// Drop the eigenvector of the smallest eigenvalue of every procedure.
    #[serde(default)]
    pub skip_trivial: bool,
    /// Build each graph over distinct patches; repeated patches share
    /// their features.
    #[serde(default = "yes")]
    pub merge_duplicate_patches: bool,
}

fn yes() -> bool {
    true
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            isolated: IsolatedPolicy::default(),
            skip_trivial: false,
            merge_duplicate_patches: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write a grid of typical first-layer patterns with this many centers.
    #[serde(default)]
    pub pattern_centers: Option<usize>,
    /// Also cluster the raw pixels and write `baseline.json`.
    #[serde(default)]
    pub raw_baseline: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub network: NetworkSpec,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub kmeans: KMeansOptions,
    #[serde(default)]
    pub guardrail: Guardrail,
    pub output: OutputConfig,
    /// Directory relative dataset paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))?;
        config.base_dir = Some(path.parent().map(Path::to_path_buf).unwrap_or_default());
        Ok(config)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = preset_text(name).ok_or_else(|| {
            Error::Config(format!("unknown preset {name:?}; available: {}", PRESETS.join(", ")))
        })?;
        Self::from_toml(text).map_err(|e| e.context(format!("preset {name}")))
    }

    /// A config file path, or a preset name when no such file exists.
    pub fn load_or_preset(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if path.exists() || preset_text(spec).is_none() {
            Self::load(path)
        } else {
            Self::preset(spec)
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path.to_path_buf(),
        }
    }

    /// Seed of the stream named `label`.
    pub fn seed_for(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    pub fn network_options(&self) -> NetworkOptions {
        NetworkOptions {
            guardrail: self.guardrail.clone(),
            isolated: self.spectral.isolated,
            skip_trivial: self.spectral.skip_trivial,
            merge_duplicates: self.spectral.merge_duplicate_patches,
            seed: self.seed_for("network"),
        }
    }

    /// Loads the dataset and applies the configured subsample.
    pub fn load_dataset(&self) -> Result<LabeledDataset> {
        let data = match &self.dataset.source {
            DatasetSource::Idx { images, labels } => {
                let labels = labels.as_ref().map(|l| self.resolve(l));
                load_idx(&self.resolve(images), labels.as_deref())?
            }
            DatasetSource::ImageDir {
                root,
                height,
                width,
                grayscale,
            } => load_image_directory(&self.resolve(root), (*height, *width), *grayscale)?,
        };
        match self.dataset.subsample {
            Some(size) if size < data.len() => data.subsample(size, self.seed_for("subsample")),
            _ => Ok(data),
        }
    }

    /// Checks everything that does not need the pixel data.
    pub fn validate_static(&self) -> Result<()> {
        let net = &self.network;
        if net.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        if net.group_size == 0 || net.group_size > 31 {
            return Err(Error::Config(format!(
                "group_size {} must lie in 1..=31",
                net.group_size
            )));
        }
        for (l, layer) in net.layers.iter().enumerate() {
            if layer.procedures.is_empty() {
                return Err(Error::Config(format!("layer {l} has no procedures")));
            }
            for (t, p) in layer.procedures.iter().enumerate() {
                let ctx = || format!("layer {l} procedure {t}");
                if p.dim == 0 {
                    return Err(Error::Config(format!("{}: dim must be at least 1", ctx())));
                }
                p.scheme.validate().map_err(|e| e.context(ctx()))?;
                p.solver.validate().map_err(|e| e.context(ctx()))?;
                p.solver.check_pairing(&p.scheme).map_err(|e| e.context(ctx()))?;
                if matches!(p.solver, SolverSpec::Nystrom { .. }) && !p.kind.is_normalized() {
                    return Err(Error::Config(format!(
                        "{}: nystrom needs a normalized Laplacian",
                        ctx()
                    )));
                }
            }
        }
        if self.kmeans.max_iter == 0 || !(self.kmeans.tol >= 0.0) {
            return Err(Error::Config("kmeans max_iter must be positive and tol nonnegative".into()));
        }
        if self.guardrail.max_dense_patches == 0 {
            return Err(Error::Config("guardrail max_dense_patches must be positive".into()));
        }
        Ok(())
    }

    /// Full validation against the loaded dataset: layer chaining, patch
    /// counts against neighbor counts and dimensions, and guardrail limits
    /// when they abort.
    pub fn validate_with(&self, data: &LabeledDataset) -> Result<()> {
        self.validate_static()?;
        let first = data
            .images
            .first()
            .ok_or_else(|| Error::Input("dataset is empty".into()))?;
        let shapes = self.network.shapes(first.height(), first.width())?;
        let (mut h, mut w) = (first.height(), first.width());
        for (l, layer) in self.network.layers.iter().enumerate() {
            let (gm, gn) = layer.patch.grid(h, w)?;
            let count = data.len() * gm * gn;
            if let (0, Some(centers)) = (l, self.output.pattern_centers) {
                if centers == 0 || centers > count {
                    return Err(Error::Config(format!(
                        "{centers} pattern centers requested from {count} first-layer patches"
                    )));
                }
            }
            for (t, p) in layer.procedures.iter().enumerate() {
                let ctx = format!("layer {l} procedure {t} ({})", p.label());
                let wanted = p.dim + usize::from(self.spectral.skip_trivial);
                if wanted > count {
                    return Err(Error::Config(format!(
                        "{ctx}: {wanted} eigenvectors requested from {count} patches"
                    )));
                }
                if let Some(k) = p.scheme.neighbors_needed() {
                    if k >= count {
                        return Err(Error::Config(format!(
                            "{ctx}: {k} neighbors requested among {count} patches"
                        )));
                    }
                }
                if let AffinityScheme::Epsilon { .. } = p.scheme {
                    if count < 2 {
                        return Err(Error::Config(format!("{ctx}: needs at least 2 patches")));
                    }
                }
                if let SolverSpec::Nystrom {
                    sample_fraction, ..
                } = p.solver
                {
                    let m = (sample_fraction * count as f64).ceil() as usize;
                    if m < wanted {
                        return Err(Error::Config(format!(
                            "{ctx}: {m} landmarks cannot yield {wanted} eigenvectors"
                        )));
                    }
                }
                if self.guardrail.on_exceed == OnExceed::Abort {
                    if let Some(reason) = guardrail_violation(p, count, &self.guardrail) {
                        return Err(Error::Guardrail(format!("layer {l}: {reason}")));
                    }
                }
            }
            (h, w) = (shapes[l].0, shapes[l].1);
        }
        if data.labels.is_none() {
            return Err(Error::Config("the dataset has no labels to cluster against".into()));
        }
        Ok(())
    }
}
