//! The spectral analysis network: stacked spectral layers followed by a
//! binarization layer and a coding layer.
//!
//! A spectral layer extracts patches from every image of the batch, runs
//! each configured spectral analysis procedure over the joint patch set,
//! and stacks each patch's spectral features back into its image's grid.
//! Channels are concatenated in procedure order, ascending eigenvalue within
//! a procedure. After the last layer every feature is reduced to its sign
//! bit, and consecutive groups of `L_group` bit maps are packed into integer
//! code maps. Within a group the map with the smallest eigenvalue receives
//! the largest weight `2^{L_group − 1}`.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use log::{debug, info, warn};
use ndarray::{s, Array2, Array4, ArrayView4, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{PointCloud, MST_NEIGHBORS};
use crate::eigen::{spectral_features_in, SolverSpec, SpectralOptions};
use crate::error::{Error, Result};
use crate::graph::AffinityScheme;
use crate::laplacian::{IsolatedPolicy, LaplacianKind};
use crate::patches::{apply_centering, extract_patches, Centering, PatchGeometry, PatchSet};
use crate::seed::derive_seed;

pub const DEFAULT_GROUP_SIZE: usize = 8;

/// One spectral analysis procedure: graph, Laplacian, solver and the number
/// of eigenvectors kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralAnalysisSpec {
    pub scheme: AffinityScheme,
    #[serde(default)]
    pub kind: LaplacianKind,
    pub solver: SolverSpec,
    pub dim: usize,
}

impl SpectralAnalysisSpec {
    pub fn label(&self) -> String {
        format!("{} {:?} x{}", self.scheme.label(), self.kind, self.dim)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolingSpec {
    pub size: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub patch: PatchGeometry,
    #[serde(default)]
    pub centering: Centering,
    pub procedures: Vec<SpectralAnalysisSpec>,
    /// Optional pooling applied to this layer's output.
    #[serde(default)]
    pub pooling: Option<PoolingSpec>,
}

/// What happens when a procedure would exceed the desk-scale limits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnExceed {
    #[default]
    Abort,
    /// Drop the procedure from the layer and continue.
    Skip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Guardrail {
    /// Largest patch count for which a full `n × n` matrix may be formed;
    /// Nyström may use up to `max_dense_patches²` kernel entries.
    pub max_dense_patches: usize,
    /// Largest undirected edge count of a sparse graph.
    #[serde(default = "Guardrail::default_max_edges")]
    pub max_edges: usize,
    #[serde(default)]
    pub on_exceed: OnExceed,
}

impl Guardrail {
    fn default_max_edges() -> usize {
        20_000_000
    }
}

impl Default for Guardrail {
    fn default() -> Self {
        Guardrail {
            max_dense_patches: 12_000,
            max_edges: Self::default_max_edges(),
            on_exceed: OnExceed::Abort,
        }
    }
}

/// Settings shared by all layers of a forward pass.
#[derive(Clone, Debug)]
pub struct NetworkOptions {
    pub guardrail: Guardrail,
    pub isolated: IsolatedPolicy,
    pub skip_trivial: bool,
    /// Solve each procedure over the distinct patches only and give every
    /// copy of a repeated patch the same features.
    pub merge_duplicates: bool,
    pub seed: u64,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        NetworkOptions {
            guardrail: Guardrail {
                max_dense_patches: usize::MAX >> 33,
                max_edges: usize::MAX,
                on_exceed: OnExceed::Abort,
            },
            isolated: IsolatedPolicy::UnitDegree,
            skip_trivial: false,
            merge_duplicates: true,
            seed: 0,
        }
    }
}

/// Origin of one feature channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    /// Index into the layer's procedure list.
    pub procedure: usize,
    /// Position among that procedure's eigenvectors.
    pub index: usize,
    pub eigenvalue: f64,
}

/// Per-image feature grids, `N × m × n × D`.
#[derive(Clone, Debug)]
pub struct FeatureTensor {
    pub data: Array4<f64>,
    pub channels: Vec<Channel>,
}

impl FeatureTensor {
    pub fn images(&self) -> usize {
        self.data.dim().0
    }

    pub fn grid(&self) -> (usize, usize) {
        let (_, m, n, _) = self.data.dim();
        (m, n)
    }

    pub fn depth(&self) -> usize {
        self.data.dim().3
    }
}

/// Sign bits of a feature tensor, `N × m × n × n_b`.
#[derive(Clone, Debug)]
pub struct BinaryMaps {
    pub bits: Array4<u8>,
    pub eigenvalues: Vec<f64>,
}

/// Packed code maps, `N × m × n × ceil(n_b / L_group)`.
#[derive(Clone, Debug)]
pub struct CodeMaps {
    pub codes: Array4<u32>,
    pub group_size: usize,
}

impl CodeMaps {
    /// One row per image, ordered by code map, then grid row, then column.
    pub fn flatten(&self) -> Array2<f64> {
        let (n_img, m, n, g) = self.codes.dim();
        let mut out = Array2::zeros((n_img, g * m * n));
        for i in 0..n_img {
            let mut p = 0;
            for k in 0..g {
                for r in 0..m {
                    for c in 0..n {
                        out[[i, p]] = self.codes[[i, r, c, k]] as f64;
                        p += 1;
                    }
                }
            }
        }
        out
    }
}

/// A procedure dropped by the guardrail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedProcedure {
    pub layer: usize,
    pub procedure: usize,
    pub reason: String,
}

pub fn guardrail_violation(spec: &SpectralAnalysisSpec, n: usize, guard: &Guardrail) -> Option<String> {
    let cap = guard.max_dense_patches as u128;
    let n128 = n as u128;
    match &spec.solver {
        SolverSpec::DenseExact if n128 > cap => Some(format!(
            "{} needs a dense {n}x{n} matrix, above the limit of {} patches",
            spec.label(),
            guard.max_dense_patches
        )),
        SolverSpec::Nystrom {
            sample_fraction, ..
        } => {
            let m = (sample_fraction * n as f64).ceil() as u128;
            (n128 * m > cap * cap).then(|| {
                format!(
                    "{} needs {n}x{m} kernel entries, above the limit of {} squared",
                    spec.label(),
                    guard.max_dense_patches
                )
            })
        }
        _ => None,
    }
}

/// Result of one spectral layer.
#[derive(Clone, Debug)]
pub struct LayerOutput {
    pub features: FeatureTensor,
    pub patches: PatchSet,
    pub skipped: Vec<SkippedProcedure>,
}

/// Runs one spectral layer over an `N × H × W × C` batch.
pub fn spectral_layer(
    input: ArrayView4<'_, f64>,
    spec: &LayerSpec,
    layer: usize,
    opts: &NetworkOptions,
) -> Result<LayerOutput> {
    if spec.procedures.is_empty() {
        return Err(Error::Config(format!("layer {layer} has no procedures")));
    }
    let patches = apply_centering(extract_patches(input, spec.patch)?, spec.centering);
    let (distinct, slot) = if opts.merge_duplicates {
        let (rows, slot) = distinct_rows(&patches.data);
        (Some(rows), slot)
    } else {
        (None, (0..patches.len()).collect())
    };
    let cloud = PointCloud::new(distinct.as_ref().unwrap_or(&patches.data).view());
    let n = cloud.len();
    info!(
        "layer {layer}: {} patches ({n} distinct) of dimension {}, {} procedures",
        patches.len(),
        cloud.dim(),
        spec.procedures.len()
    );

    // landmark budgets stay relative to all patches, not just distinct ones
    let procedures: Vec<SpectralAnalysisSpec> = spec
        .procedures
        .iter()
        .map(|p| match p.solver {
            SolverSpec::Nystrom { sample_fraction, seed } if n < patches.len() => {
                let m = (sample_fraction * patches.len() as f64).ceil();
                SpectralAnalysisSpec {
                    solver: SolverSpec::Nystrom {
                        sample_fraction: ((m - 0.5) / n as f64).min(1.0),
                        seed,
                    },
                    ..p.clone()
                }
            }
            _ => p.clone(),
        })
        .collect();

    let guard = &opts.guardrail;
    let mut runnable = Vec::new();
    let mut skipped = Vec::new();
    for (t, proc_spec) in procedures.iter().enumerate() {
        match guardrail_violation(proc_spec, n, guard) {
            None => runnable.push(t),
            Some(reason) => match guard.on_exceed {
                OnExceed::Abort => return Err(Error::Guardrail(format!("layer {layer}: {reason}"))),
                OnExceed::Skip => {
                    warn!("layer {layer}: skipping procedure {t}: {reason}");
                    skipped.push(SkippedProcedure {
                        layer,
                        procedure: t,
                        reason,
                    });
                }
            },
        }
    }
    // one shared neighbor table serves every procedure of the layer
    let mut need = runnable
        .iter()
        .filter_map(|&t| procedures[t].scheme.neighbors_needed())
        .max()
        .unwrap_or(0);
    if runnable
        .iter()
        .any(|&t| matches!(procedures[t].scheme, AffinityScheme::Epsilon { .. }))
    {
        need = need.max(MST_NEIGHBORS);
    }
    if need > 0 && n > 1 {
        cloud.neighbors(need.min(n - 1))?;
    }

    let results: Vec<(usize, Result<crate::eigen::SpectralEmbedding>)> = runnable
        .par_iter()
        .map(|&t| {
            let p = &procedures[t];
            let sopts = SpectralOptions {
                isolated: opts.isolated,
                max_edges: guard.max_edges,
                skip_trivial: opts.skip_trivial,
                seed: derive_seed(opts.seed, &format!("layer{layer}/procedure{t}")),
            };
            let started = std::time::Instant::now();
            let out = spectral_features_in(&cloud, &p.scheme, p.kind, &p.solver, p.dim, &sopts)
                .map_err(|e| e.context(format!("layer {layer} procedure {t} ({})", p.label())));
            debug!("layer {layer} procedure {t} ({}) took {:.1?}", p.label(), started.elapsed());
            (t, out)
        })
        .collect();

    let mut embeddings = Vec::new();
    for (t, r) in results {
        match r {
            Ok(e) => embeddings.push((t, e)),
            Err(e) if guard.on_exceed == OnExceed::Skip && matches!(e.root(), Error::Guardrail(_)) => {
                warn!("{e}");
                skipped.push(SkippedProcedure {
                    layer,
                    procedure: t,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    skipped.sort_by_key(|s| s.procedure);
    if embeddings.is_empty() {
        return Err(Error::Guardrail(format!(
            "layer {layer}: every procedure exceeded the desk-scale limits"
        )));
    }

    let depth: usize = embeddings.iter().map(|(_, e)| e.k()).sum();
    let (m, g) = (patches.grid_rows, patches.grid_cols);
    let mut data = Array4::<f64>::zeros((patches.images, m, g, depth));
    let mut channels = Vec::with_capacity(depth);
    let mut offset = 0;
    for (t, e) in &embeddings {
        for (j, &lambda) in e.eigenvalues.iter().enumerate() {
            channels.push(Channel {
                procedure: *t,
                index: j,
                eigenvalue: lambda,
            });
        }
        for (flat, &u) in slot.iter().enumerate() {
            let (img, r, c) = patches.location(flat);
            data.slice_mut(s![img, r, c, offset..offset + e.k()]).assign(&e.vectors.row(u));
        }
        offset += e.k();
    }
    let mut features = FeatureTensor { data, channels };
    if let Some(p) = spec.pooling {
        features = pool(&features, p.size, p.stride)?;
    }
    Ok(LayerOutput {
        features,
        patches,
        skipped,
    })
}

/// Distinct rows in first-occurrence order, and for every input row the
/// index of its distinct copy. Rows compare bitwise, with `-0.0 == 0.0`.
fn distinct_rows(data: &Array2<f64>) -> (Array2<f64>, Vec<usize>) {
    let key = |v: f64| if v == 0.0 { 0u64 } else { v.to_bits() };
    let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut firsts: Vec<usize> = Vec::new();
    let mut slot = Vec::with_capacity(data.nrows());
    for (i, row) in data.axis_iter(Axis(0)).enumerate() {
        let mut h = DefaultHasher::new();
        row.iter().for_each(|&v| key(v).hash(&mut h));
        let bucket = buckets.entry(h.finish()).or_default();
        let same = |&u: &usize| data.row(firsts[u]).iter().zip(row).all(|(a, b)| key(*a) == key(*b));
        match bucket.iter().copied().find(same) {
            Some(u) => slot.push(u),
            None => {
                bucket.push(firsts.len());
                slot.push(firsts.len());
                firsts.push(i);
            }
        }
    }
    (data.select(Axis(0), &firsts), slot)
}

/// Signed max-magnitude pooling inside each channel map. Ties keep the
/// first value in row-major window order; windows may overlap.
pub fn pool(features: &FeatureTensor, size: usize, stride: usize) -> Result<FeatureTensor> {
    let (n_img, m, n, d) = features.data.dim();
    if size == 0 || stride == 0 {
        return Err(Error::Config("pooling size and stride must be positive".into()));
    }
    if size > m || size > n {
        return Err(Error::Config(format!("pooling window {size} larger than the {m}x{n} map")));
    }
    let (om, on) = ((m - size) / stride + 1, (n - size) / stride + 1);
    let mut out = Array4::<f64>::zeros((n_img, om, on, d));
    for i in 0..n_img {
        for ch in 0..d {
            for r in 0..om {
                for c in 0..on {
                    let mut best = features.data[[i, r * stride, c * stride, ch]];
                    for dr in 0..size {
                        for dc in 0..size {
                            let v = features.data[[i, r * stride + dr, c * stride + dc, ch]];
                            if v.abs() > best.abs() {
                                best = v;
                            }
                        }
                    }
                    out[[i, r, c, ch]] = best;
                }
            }
        }
    }
    Ok(FeatureTensor {
        data: out,
        channels: features.channels.clone(),
    })
}

/// 1 where a feature is strictly positive, 0 otherwise.
pub fn binarize(features: &FeatureTensor) -> BinaryMaps {
    BinaryMaps {
        bits: features.data.mapv(|v| u8::from(v > 0.0)),
        eigenvalues: features.channels.iter().map(|c| c.eigenvalue).collect(),
    }
}

/// Packs consecutive groups of `group_size` bit maps into integer maps.
/// Inside a group, maps are ranked by ascending eigenvalue (channel order on
/// ties) and rank `q` carries weight `2^{group_size − 1 − q}`; a short final
/// group leaves its low-weight positions empty.
pub fn encode(bits: &BinaryMaps, group_size: usize) -> Result<CodeMaps> {
    if group_size == 0 || group_size > 31 {
        return Err(Error::Config(format!("code group size {group_size} must lie in 1..=31")));
    }
    let (n_img, m, n, nb) = bits.bits.dim();
    if bits.eigenvalues.len() != nb {
        return Err(Error::Consistency(format!(
            "{nb} bit maps but {} eigenvalues",
            bits.eigenvalues.len()
        )));
    }
    let groups = nb.div_ceil(group_size);
    let mut weights = vec![0u32; nb];
    for g in 0..groups {
        let mut members: Vec<usize> = (g * group_size..((g + 1) * group_size).min(nb)).collect();
        members.sort_by(|&a, &b| bits.eigenvalues[a].total_cmp(&bits.eigenvalues[b]).then(a.cmp(&b)));
        for (q, &ch) in members.iter().enumerate() {
            weights[ch] = 1 << (group_size - 1 - q);
        }
    }
    let mut codes = Array4::<u32>::zeros((n_img, m, n, groups));
    for ((i, r, c, ch), &b) in bits.bits.indexed_iter() {
        if b != 0 {
            codes[[i, r, c, ch / group_size]] += weights[ch];
        }
    }
    Ok(CodeMaps { codes, group_size })
}

/// Layer stack plus coding parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
}

fn default_group_size() -> usize {
    DEFAULT_GROUP_SIZE
}

impl NetworkSpec {
    /// Output grid and depth of every layer for an `h × w` input, assuming
    /// no procedure is skipped.
    pub fn shapes(&self, h: usize, w: usize) -> Result<Vec<(usize, usize, usize)>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let (mut h, mut w) = (h, w);
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.procedures.is_empty() {
                return Err(Error::Config(format!("layer {l} has no procedures")));
            }
            let (mut m, mut n) = layer.patch.grid(h, w).map_err(|e| e.context(format!("layer {l}")))?;
            let depth: usize = layer.procedures.iter().map(|p| p.dim).sum();
            if let Some(p) = layer.pooling {
                if p.size == 0 || p.stride == 0 || p.size > m || p.size > n {
                    return Err(Error::Config(format!(
                        "layer {l}: pooling window {} does not fit the {m}x{n} grid",
                        p.size
                    )));
                }
                m = (m - p.size) / p.stride + 1;
                n = (n - p.size) / p.stride + 1;
            }
            out.push((m, n, depth));
            h = m;
            w = n;
        }
        Ok(out)
    }
}

/// Everything a forward pass produces.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// One row per image.
    pub features: Array2<f64>,
    pub codes: CodeMaps,
    /// Output of each layer, kept only when requested.
    pub layers: Vec<LayerOutput>,
    pub skipped: Vec<SkippedProcedure>,
}

/// Runs every layer, then binarization and coding.
pub fn forward(
    images: ArrayView4<'_, f64>,
    spec: &NetworkSpec,
    opts: &NetworkOptions,
    keep_layers: bool,
) -> Result<ForwardOutput> {
    if spec.layers.is_empty() {
        return Err(Error::Config("network has no layers".into()));
    }
    let mut current: Option<FeatureTensor> = None;
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (l, layer) in spec.layers.iter().enumerate() {
        let input = match &current {
            None => images,
            Some(t) => t.data.view(),
        };
        let out = spectral_layer(input, layer, l, opts)?;
        skipped.extend(out.skipped.iter().cloned());
        let features = out.features.clone();
        let expected = layer.procedures.iter().map(|p| p.dim).sum::<usize>()
            - out
                .skipped
                .iter()
                .map(|s| layer.procedures[s.procedure].dim)
                .sum::<usize>();
        if features.depth() != expected {
            return Err(Error::Consistency(format!(
                "layer {l} produced depth {} instead of {expected}",
                features.depth()
            )));
        }
        if keep_layers {
            kept.push(out);
        }
        current = Some(features);
    }
    let last = current.expect("at least one layer");
    let codes = encode(&binarize(&last), spec.group_size)?;
    Ok(ForwardOutput {
        features: codes.flatten(),
        codes,
        layers: kept,
        skipped,
    })
}
