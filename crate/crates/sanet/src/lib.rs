//! Unsupervised image clustering with spectral analysis networks.
//!
//! Images are cut into patches, the patches of the whole dataset are
//! embedded with eigenvectors of graph Laplacians, and the resulting
//! feature maps are stacked layer by layer. The last layer's features are
//! binarized, packed into integer codes and clustered with k-means.
//!
//! ```
//! use ndarray::Array4;
//! use sanet::cluster::{kmeans, KMeansOptions};
//! use sanet::eigen::SolverSpec;
//! use sanet::graph::AffinityScheme;
//! use sanet::laplacian::LaplacianKind;
//! use sanet::network::{forward, LayerSpec, NetworkOptions, NetworkSpec, SpectralAnalysisSpec};
//! use sanet::patches::{Centering, PatchGeometry};
//!
//! let images = Array4::from_shape_fn((10, 6, 6, 1), |(n, r, c, _)| ((n * 3 + r * c) % 7) as f64);
//! let spec = NetworkSpec {
//!     layers: vec![LayerSpec {
//!         patch: PatchGeometry::new(3, 3, 3),
//!         centering: Centering::DatasetMean,
//!         procedures: vec![SpectralAnalysisSpec {
//!             scheme: AffinityScheme::knn(5),
//!             kind: LaplacianKind::Symmetric,
//!             solver: SolverSpec::lanczos(),
//!             dim: 8,
//!         }],
//!         pooling: None,
//!     }],
//!     group_size: 8,
//! };
//! let out = forward(images.view(), &spec, &NetworkOptions::default(), false)?;
//! assert_eq!(out.features.dim(), (10, 4));
//! let clusters = kmeans(out.features.view(), 3, &KMeansOptions::default(), 0)?;
//! assert_eq!(clusters.labels.len(), 10);
//! # Ok::<(), sanet::Error>(())
//! ```
//!
//! The guide in `book/` walks through every stage; its examples are
//! compiled and run as doc-tests of this crate.

pub mod cluster;
pub mod config;
pub mod distance;
pub mod eigen;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod laplacian;
pub mod network;
pub mod patches;
pub mod runner;
pub mod seed;
pub mod sparse;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/spectra.md")]
    mod spectra {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/coding.md")]
    mod coding {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
