mod common;

use itertools::Itertools;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

use sanet::cluster::{
    accuracy, confusion, hungarian, kmeans, nmi, nmi_with, KMeansOptions, MetricReport, NmiNormalization,
};

/// Mutual information over entropies from first principles.
fn nmi_oracle(a: &[usize], b: &[usize], geometric: bool) -> f64 {
    let n = a.len() as f64;
    let count = |f: &dyn Fn(usize) -> bool| (0..a.len()).filter(|&i| f(i)).count() as f64;
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let entropy = |labels: &[usize], k: usize| -> f64 {
        (0..k)
            .map(|c| labels.iter().filter(|&&l| l == c).count() as f64 / n)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    };
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let pxy = count(&|i| a[i] == x && b[i] == y) / n;
            if pxy > 0.0 {
                let px = count(&|i| a[i] == x) / n;
                let py = count(&|i| b[i] == y) / n;
                mi += pxy * (pxy / (px * py)).ln();
            }
        }
    }
    let (ha, hb) = (entropy(a, ka), entropy(b, kb));
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    if geometric {
        mi / (ha * hb).sqrt()
    } else {
        2.0 * mi / (ha + hb)
    }
}

#[test]
fn kmeans_recovers_separated_blobs() {
    let (points, truth) = common::blobs(&[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 30, 0.5, 1);
    let r = kmeans(points.view(), 3, &KMeansOptions::default(), 4).unwrap();
    assert_eq!(accuracy(&r.labels, &truth).unwrap(), 1.0);
    let direct: f64 = (0..points.nrows())
        .map(|i| {
            let c = r.centers.row(r.labels[i]);
            points.row(i).iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum();
    assert!((direct - r.inertia).abs() <= 1e-8 * direct.max(1.0));
}

#[test]
fn kmeans_single_cluster_is_the_mean() {
    let (points, _) = common::blobs(&[[1.0, 2.0]], 40, 1.0, 2);
    let r = kmeans(points.view(), 1, &KMeansOptions::default(), 0).unwrap();
    let mean = points.mean_axis(ndarray::Axis(0)).unwrap();
    assert!(r.labels.iter().all(|&l| l == 0));
    assert!((&r.centers.row(0) - &mean).iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn kmeans_exact_fit_and_bad_k() {
    let points = ndarray::array![[0.0, 0.0], [1.0, 1.0]];
    let r = kmeans(points.view(), 2, &KMeansOptions::default(), 0).unwrap();
    assert_ne!(r.labels[0], r.labels[1]);
    assert_eq!(r.inertia, 0.0);
    assert!(kmeans(points.view(), 3, &KMeansOptions::default(), 0).is_err());
}

#[test]
fn kmeans_is_deterministic_per_seed() {
    let mut rng = common::rng(3);
    let points = Array2::from_shape_fn((200, 5), |_| rng.random::<f64>());
    let opts = KMeansOptions::default();
    let a = kmeans(points.view(), 6, &opts, 11).unwrap();
    let b = kmeans(points.view(), 6, &opts, 11).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
}

#[test]
fn kmeans_handles_duplicate_points() {
    let points = Array2::from_shape_fn((12, 2), |(i, _)| (i % 2) as f64);
    let r = kmeans(points.view(), 3, &KMeansOptions::default(), 5).unwrap();
    assert_eq!(r.labels.len(), 12);
    assert!(r.inertia.abs() < 1e-12);
}

#[test]
fn hungarian_matches_exhaustive_search() {
    let mut rng = common::rng(4);
    for n in 1..=6 {
        for _ in 0..20 {
            let cost = Array2::from_shape_fn((n, n), |_| rng.random_range(0..20) as f64);
            let assignment = hungarian(cost.view()).unwrap();
            let total: f64 = assignment.iter().enumerate().map(|(r, &c)| cost[[r, c]]).sum();
            let best = (0..n)
                .permutations(n)
                .map(|p| p.iter().enumerate().map(|(r, &c)| cost[[r, c]]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(total, best);
            assert_eq!(assignment.iter().copied().sorted().collect::<Vec<_>>(), (0..n).collect::<Vec<_>>());
        }
    }
}

#[test]
fn hungarian_rejects_bad_input() {
    assert!(hungarian(Array2::zeros((2, 3)).view()).is_err());
    assert!(hungarian(ndarray::array![[0.0, f64::NAN], [1.0, 0.0]].view()).is_err());
}

#[test]
fn metric_examples() {
    assert_eq!(accuracy(&[1, 1, 0, 0], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert!((nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap()).abs() < 1e-12);
    assert_eq!(nmi(&[0, 0, 0], &[0, 1, 2]).unwrap(), 0.0);
    let t = confusion(&[0, 0, 1, 2], &[1, 1, 0, 0]).unwrap();
    assert_eq!(t.dim(), (3, 2));
    assert_eq!(t[[0, 1]], 2);
    assert!(accuracy(&[0, 1], &[0]).is_err());
    let report = MetricReport::evaluate(&[0, 0, 1, 1], &[1, 1, 0, 0], 2).unwrap();
    assert_eq!((report.acc, report.n, report.k), (1.0, 4, 2));
}

proptest! {
    #[test]
    fn nmi_matches_the_oracle(
        pairs in prop::collection::vec((0usize..4, 0usize..5), 2..80)
    ) {
        let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let g = nmi(&a, &b).unwrap();
        let ar = nmi_with(&a, &b, NmiNormalization::Arithmetic).unwrap();
        prop_assert!((g - nmi_oracle(&a, &b, true)).abs() < 1e-12);
        prop_assert!((ar - nmi_oracle(&a, &b, false)).abs() < 1e-12);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&g));
    }

    #[test]
    fn metrics_ignore_label_permutations(
        pairs in prop::collection::vec((0usize..5, 0usize..5), 1..80),
        perm_seed in 0usize..120,
    ) {
        let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let perm = (0..5).permutations(5).nth(perm_seed).unwrap();
        let renamed: Vec<usize> = a.iter().map(|&l| perm[l]).collect();
        prop_assert_eq!(accuracy(&a, &b).unwrap(), accuracy(&renamed, &b).unwrap());
        prop_assert!((nmi(&a, &b).unwrap() - nmi(&renamed, &b).unwrap()).abs() < 1e-12);
        prop_assert!((nmi(&a, &a).unwrap() - 1.0).abs() < 1e-12 || a.iter().all(|&l| l == a[0]));
    }
}
