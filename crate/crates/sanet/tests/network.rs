mod common;

use ndarray::{Array2, Array4};
use proptest::prelude::*;

use sanet::eigen::SolverSpec;
use sanet::graph::{AffinityGraph, AffinityScheme};
use sanet::ingest::{load_idx, stack_images};
use sanet::laplacian::LaplacianKind;
use sanet::network::{
    binarize, encode, forward, guardrail_violation, spectral_layer, Channel, FeatureTensor, Guardrail, LayerSpec,
    NetworkOptions, NetworkSpec, OnExceed, SpectralAnalysisSpec,
};
use sanet::patches::{Centering, PatchGeometry};
use sanet::Error;

fn procedure(scheme: AffinityScheme, solver: SolverSpec, dim: usize) -> SpectralAnalysisSpec {
    SpectralAnalysisSpec {
        scheme,
        kind: LaplacianKind::Symmetric,
        solver,
        dim,
    }
}

fn layer(patch: PatchGeometry, procedures: Vec<SpectralAnalysisSpec>) -> LayerSpec {
    LayerSpec {
        patch,
        centering: Centering::DatasetMean,
        procedures,
        pooling: None,
    }
}

fn small_mnist(count: usize) -> Array4<f64> {
    let (images, labels) = common::mnist_fixture();
    let data = load_idx(&images, Some(&labels)).unwrap().subsample(count, 0).unwrap();
    stack_images(&data.images).unwrap()
}

fn two_layer_spec() -> NetworkSpec {
    NetworkSpec {
        layers: vec![
            layer(
                PatchGeometry::new(11, 11, 5).with_padding(4, 4),
                vec![
                    procedure(AffinityScheme::knn(9), SolverSpec::lanczos(), 8),
                    // padded border patches repeat, so duplicates share a scale
                    procedure(
                        AffinityScheme::SelfTuning {
                            k_local: 7,
                            merge_duplicates: true,
                        },
                        SolverSpec::nystrom(0.2, 3),
                        8,
                    ),
                ],
            ),
            layer(
                PatchGeometry::new(4, 4, 1),
                vec![procedure(AffinityScheme::knn(5), SolverSpec::lanczos(), 8)],
            ),
        ],
        group_size: 8,
    }
}

#[test]
fn shapes_follow_the_grid_formula() {
    let spec = two_layer_spec();
    assert_eq!(spec.shapes(28, 28).unwrap(), vec![(6, 6, 16), (3, 3, 8)]);
}

#[test]
fn forward_produces_one_row_per_image() {
    let batch = small_mnist(30);
    let spec = two_layer_spec();
    let out = forward(batch.view(), &spec, &NetworkOptions::default(), true).unwrap();
    assert_eq!(out.features.dim(), (30, 9));
    assert_eq!(out.layers.len(), 2);
    assert_eq!(out.layers[0].features.data.dim(), (30, 6, 6, 16));
    assert!(out.features.iter().all(|&v| (0.0..256.0).contains(&v) && v.fract() == 0.0));

    let channels = &out.layers[0].features.channels;
    assert_eq!(channels.iter().filter(|c| c.procedure == 0).count(), 8);
    for pair in channels.windows(2) {
        if pair[0].procedure == pair[1].procedure {
            assert!(pair[0].eigenvalue <= pair[1].eigenvalue);
        } else {
            assert!(pair[0].procedure < pair[1].procedure);
        }
    }
}

#[test]
fn forward_is_deterministic_and_duplicates_agree() {
    let mut batch = small_mnist(30);
    let first = batch.index_axis(ndarray::Axis(0), 0).to_owned();
    batch.index_axis_mut(ndarray::Axis(0), 1).assign(&first);
    let spec = two_layer_spec();
    let opts = NetworkOptions {
        seed: 17,
        ..NetworkOptions::default()
    };
    let a = forward(batch.view(), &spec, &opts, false).unwrap();
    let b = forward(batch.view(), &spec, &opts, false).unwrap();
    assert_eq!(a.features, b.features);
    assert_eq!(a.features.row(0), a.features.row(1));
}

#[test]
fn repeated_patches_share_one_vertex() {
    let batch = small_mnist(10);
    let spec = layer(
        PatchGeometry::new(11, 11, 5).with_padding(4, 4),
        vec![procedure(AffinityScheme::knn(5), SolverSpec::DenseExact, 3)],
    );
    let out = spectral_layer(batch.view(), &spec, 0, &NetworkOptions::default()).unwrap();
    let rows = out.patches.data.rows().into_iter().collect::<Vec<_>>();
    let (n, m, g, _) = out.features.data.dim();
    let feature = |flat: usize| {
        let (img, r, c) = (flat / (m * g), flat / g % m, flat % g);
        out.features.data.slice(ndarray::s![img, r, c, ..]).to_owned()
    };
    let mut repeats = 0;
    for i in 0..n * m * g {
        for j in 0..i {
            if rows[i] == rows[j] {
                assert_eq!(feature(i), feature(j));
                repeats += 1;
            }
        }
    }
    assert!(repeats > 0);
}

#[test]
fn guardrail_skip_and_abort() {
    let batch = small_mnist(20);
    let spec = layer(
        PatchGeometry::new(11, 11, 5).with_padding(4, 4),
        vec![
            procedure(AffinityScheme::knn(5), SolverSpec::lanczos(), 4),
            procedure(AffinityScheme::gaussian(1.0), SolverSpec::DenseExact, 4),
        ],
    );
    let guard = Guardrail {
        max_dense_patches: 100,
        max_edges: 20_000_000,
        on_exceed: OnExceed::Skip,
    };
    assert!(guardrail_violation(&spec.procedures[1], 720, &guard).is_some());
    assert!(guardrail_violation(&spec.procedures[0], 720, &guard).is_none());
    let mut opts = NetworkOptions {
        guardrail: guard,
        ..NetworkOptions::default()
    };
    let out = spectral_layer(batch.view(), &spec, 0, &opts).unwrap();
    assert_eq!(out.skipped.len(), 1);
    assert_eq!(out.skipped[0].procedure, 1);
    assert_eq!(out.features.depth(), 4);

    opts.guardrail.on_exceed = OnExceed::Abort;
    let err = spectral_layer(batch.view(), &spec, 0, &opts).unwrap_err();
    assert!(matches!(err, Error::Guardrail(_)), "{err}");
}

#[test]
fn landmark_budget_counts_every_patch() {
    // 20 distinct values, each twice: 10% of 40 patches is 4 landmarks
    let batch = Array4::from_shape_fn((40, 1, 1, 1), |(i, _, _, _)| (i % 20) as f64 * 0.37);
    let spec = layer(
        PatchGeometry::new(1, 1, 1),
        vec![procedure(AffinityScheme::gaussian(1.0), SolverSpec::nystrom(0.1, 5), 4)],
    );
    let out = spectral_layer(batch.view(), &spec, 0, &NetworkOptions::default()).unwrap();
    assert_eq!(out.features.depth(), 4);
}

#[test]
fn block_model_features_are_constant_within_clusters() {
    // two tight groups of 1x1 "images" with a single-pixel patch each
    let values = [0.10, 0.11, 0.12, 0.13, 0.14, 0.80, 0.81, 0.82, 0.83, 0.84];
    let batch = Array4::from_shape_fn((10, 1, 1, 1), |(i, _, _, _)| values[i]);
    let spec = NetworkSpec {
        layers: vec![layer(
            PatchGeometry::new(1, 1, 1),
            vec![procedure(AffinityScheme::knn(3), SolverSpec::DenseExact, 2)],
        )],
        group_size: 8,
    };
    let out = forward(batch.view(), &spec, &NetworkOptions::default(), false).unwrap();
    let f = out.features.column(0);
    assert!(f.iter().take(5).all(|&v| v == f[0]));
    assert!(f.iter().skip(5).all(|&v| v == f[5]));
    assert_ne!(f[0], f[5]);
}

#[test]
fn fiedler_bits_split_two_blocks() {
    let n = 40;
    let w = Array2::from_shape_fn((n, n), |(i, j)| match (i == j, i / 20 == j / 20) {
        (true, _) => 0.0,
        (false, true) => 1.0,
        (false, false) => 0.01,
    });
    let g = AffinityGraph::from_dense(w).unwrap();
    let e = sanet::eigen::solve_graph(&g, LaplacianKind::Symmetric, &SolverSpec::DenseExact, 2, &Default::default()).unwrap();
    let features = FeatureTensor {
        data: e.vectors.column(1).to_owned().into_shape_with_order((n, 1, 1, 1)).unwrap(),
        channels: vec![Channel {
            procedure: 0,
            index: 1,
            eigenvalue: e.eigenvalues[1],
        }],
    };
    let bits = binarize(&features).bits;
    assert!(bits.iter().take(20).all(|&b| b == bits[[0, 0, 0, 0]]));
    assert!(bits.iter().skip(20).all(|&b| b != bits[[0, 0, 0, 0]]));
}

fn random_tensor(values: Vec<f64>, depth: usize, eigenvalues: Vec<f64>) -> FeatureTensor {
    let n = values.len() / (4 * depth);
    FeatureTensor {
        data: Array4::from_shape_vec((n, 2, 2, depth), values).unwrap(),
        channels: eigenvalues
            .into_iter()
            .enumerate()
            .map(|(index, eigenvalue)| Channel {
                procedure: 0,
                index,
                eigenvalue,
            })
            .collect(),
    }
}

proptest! {
    #[test]
    fn codes_ignore_positive_channel_rescaling(
        values in prop::collection::vec(-1.0f64..1.0, 2 * 4 * 10),
        scales in prop::collection::vec(0.01f64..100.0, 10),
        eigenvalues in prop::collection::vec(0.0f64..2.0, 10),
        group in 1usize..12,
    ) {
        let t = random_tensor(values, 10, eigenvalues);
        let mut scaled = t.clone();
        for (ch, s) in scales.iter().enumerate() {
            scaled.data.index_axis_mut(ndarray::Axis(3), ch).mapv_inplace(|v| v * s);
        }
        let a = encode(&binarize(&t), group).unwrap();
        let b = encode(&binarize(&scaled), group).unwrap();
        prop_assert_eq!(&a.codes, &b.codes);
        prop_assert!(a.codes.iter().all(|&c| c < 1 << group));
        prop_assert_eq!(a.codes.dim().3, 10usize.div_ceil(group));
    }

    #[test]
    fn negation_complements_nonzero_bits(values in prop::collection::vec(-1.0f64..1.0, 4 * 3)) {
        let t = random_tensor(values, 3, vec![0.0, 0.1, 0.2]);
        let mut neg = t.clone();
        neg.data.mapv_inplace(|v| -v);
        let (a, b) = (binarize(&t).bits, binarize(&neg).bits);
        for ((x, y), v) in a.iter().zip(b.iter()).zip(t.data.iter()) {
            if *v != 0.0 {
                prop_assert_eq!(x + y, 1);
            }
        }
    }
}
