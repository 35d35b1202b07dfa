mod common;

use std::fs;

use sanet::config::{DatasetSource, PipelineConfig, PRESETS};
use sanet::runner;
use sanet::Error;

const TINY: &str = r#"
seed = 3

[dataset]
format = "idx"
images = "images.idx"
labels = "labels.idx"

[network]
group_size = 8

[[network.layers]]
patch = { height = 4, width = 4, stride = 4 }

[[network.layers.procedures]]
scheme = { type = "knn", k = 5 }
solver = { method = "lanczos" }
dim = 4

[[network.layers.procedures]]
scheme = { type = "gaussian", sigma = 1.0 }
solver = { method = "nystrom", sample_fraction = 0.5 }
dim = 4

[output]
dir = "out"
"#;

fn tiny_project(dir: &std::path::Path) -> std::path::PathBuf {
    let (pixels, classes) = common::bar_images(20, 2, 8, 1);
    common::write_idx(&dir.join("images.idx"), &dir.join("labels.idx"), 8, 8, &pixels, &classes);
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path
}

#[test]
fn every_preset_round_trips() {
    for name in PRESETS {
        let c = PipelineConfig::preset(name).unwrap();
        let text = c.to_toml().unwrap();
        let back = PipelineConfig::from_toml(&text).unwrap();
        assert_eq!(back, c, "{name}");
        assert_eq!(back.to_toml().unwrap(), text, "{name}");
    }
}

#[test]
fn mnist_preset_matches_the_reference_architecture() {
    let c = PipelineConfig::preset("mnist-default").unwrap();
    assert_eq!(c.network.layers.len(), 2);
    assert_eq!(c.network.layers[0].procedures.len(), 8);
    assert!(c.network.layers[0].procedures.iter().all(|p| p.dim == 64));
    assert_eq!(c.network.layers[1].procedures.len(), 4);
    assert!(c.network.layers[1].procedures.iter().all(|p| p.dim == 16));
    assert_eq!(c.network.shapes(28, 28).unwrap(), vec![(6, 6, 512), (3, 3, 64)]);
    // 64 bit maps, groups of 8, 3x3 grid
    let (m, n, d) = c.network.shapes(28, 28).unwrap()[1];
    assert_eq!(m * n * d.div_ceil(c.network.group_size), 72);
}

#[test]
fn relative_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = tiny_project(dir.path());
    let c = PipelineConfig::load(&path).unwrap();
    let data = c.load_dataset().unwrap();
    assert_eq!(data.len(), 20);
    c.validate_with(&data).unwrap();
}

#[test]
fn unknown_fields_are_rejected() {
    let text = TINY.replace("seed = 3", "seed = 3\ncolour = \"blue\"");
    assert!(matches!(PipelineConfig::from_toml(&text), Err(Error::Config(_))));
}

#[test]
fn neighbor_count_at_patch_count_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = tiny_project(dir.path());
    fs::write(&path, TINY.replace("k = 5", "k = 80")).unwrap();
    let c = PipelineConfig::load(&path).unwrap();
    let err = runner::validate(&c).unwrap_err();
    assert!(err.to_string().contains("80 neighbors requested among 80 patches"), "{err}");
}

#[test]
fn too_few_landmarks_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = tiny_project(dir.path());
    fs::write(&path, TINY.replace("sample_fraction = 0.5", "sample_fraction = 0.01")).unwrap();
    let c = PipelineConfig::load(&path).unwrap();
    assert!(runner::validate(&c).is_err());
}

#[test]
fn unlabeled_data_cannot_be_scored() {
    let dir = tempfile::tempdir().unwrap();
    let path = tiny_project(dir.path());
    let mut c = PipelineConfig::load(&path).unwrap();
    if let DatasetSource::Idx { labels, .. } = &mut c.dataset.source {
        *labels = None;
    }
    assert!(matches!(runner::validate(&c), Err(Error::Config(_))));
}

#[test]
fn seeds_split_by_label() {
    let c = PipelineConfig::from_toml(TINY).unwrap();
    assert_ne!(c.seed_for("kmeans"), c.seed_for("subsample"));
    assert_eq!(c.seed_for("kmeans"), PipelineConfig::from_toml(TINY).unwrap().seed_for("kmeans"));
}

#[test]
fn run_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let path = tiny_project(dir.path());
    let mut c = PipelineConfig::load(&path).unwrap();
    c.output.raw_baseline = true;
    c.output.pattern_centers = Some(4);
    let mut metrics = Vec::new();
    for run in 0..2 {
        c.output.dir = dir.path().join(format!("out{run}"));
        let summary = runner::run(&c).unwrap();
        assert_eq!(summary.info.images, 20);
        assert_eq!(summary.info.feature_dim, 4);
        for f in ["metrics.json", "config.toml", "features.bin", "features.json", "run.json", "baseline.json", "patterns.png"] {
            assert!(summary.out_dir.join(f).exists(), "{f} missing");
        }
        let bytes = fs::read(summary.out_dir.join("features.bin")).unwrap();
        assert_eq!(bytes.len(), 20 * 4 * 4);
        let resolved = PipelineConfig::load(&summary.out_dir.join("config.toml")).unwrap();
        assert_eq!(resolved.network, c.network);
        metrics.push(fs::read(summary.out_dir.join("metrics.json")).unwrap());
    }
    assert_eq!(metrics[0], metrics[1]);
}

#[test]
fn too_many_pattern_centers_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = tiny_project(dir.path());
    let mut c = PipelineConfig::load(&path).unwrap();
    c.output.pattern_centers = Some(81);
    assert!(matches!(runner::validate(&c), Err(Error::Config(_))));
}

#[test]
fn failed_run_leaves_no_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = tiny_project(dir.path());
    // identical images collapse to a single distinct patch, which only
    // surfaces once the network runs
    let blank = vec![vec![0u8; 64]; 20];
    let classes: Vec<u8> = (0..20).map(|i| i % 2).collect();
    common::write_idx(&dir.path().join("images.idx"), &dir.path().join("labels.idx"), 8, 8, &blank, &classes);
    let mut c = PipelineConfig::load(&path).unwrap();
    c.output.dir = dir.path().join("doomed");
    let err = runner::run(&c).unwrap_err();
    assert!(matches!(err.root(), Error::Config(_)), "{err}");
    assert!(err.to_string().contains("from 1 points"), "{err}");
    assert!(!c.output.dir.exists());
}
