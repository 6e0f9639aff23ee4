use std::path::Path;

use facebench::data::{load_image_dir, load_with_manifest, write_manifest, IngestOptions};
use facebench::error::Error;
use facebench::eval::EvalCategory;
use facebench::experiment::{run_experiment, sweep_dimensionality, ExperimentConfig, ResultBundle};
use facebench::persist::{ModelContainer, StoredModel};
use facebench::report::{emit_reports, rank1_text, ReportOptions};
use facebench::subspace::{train_pca, DimensionalityPolicy};

const SMALL: &str = r#"
seed = 3

[data]
source = "synthetic"
num_classes = 6
ambient_dim = 24

[[algorithms]]
tag = "PCA"
kind = "pca"
metric = "l2"

[[algorithms]]
tag = "LDA"
kind = "lda"
metric = "mahalanobis"

[[algorithms]]
tag = "KPCA"
kind = "kpca"
metric = "cosine"
kernel = { kind = "rbf" }

[fusion]
members = ["PCA", "LDA"]
methods = ["method1", "method2"]
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml(SMALL).unwrap()
}

fn config_error(text: &str) -> String {
    match ExperimentConfig::from_toml(text) {
        Err(Error::Config(msg)) => msg,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn config_rejects_bad_input() {
    assert!(config_error(&SMALL.replace("seed = 3", "seed = 3\nbogus = 1")).contains("bogus"));
    assert!(
        config_error(&SMALL.replace("seed = 3", "seed = 3\nschema_version = 9"))
            .contains("schema_version")
    );
    assert!(config_error(&SMALL.replace("tag = \"LDA\"", "tag = \"PCA\"")).contains("duplicate"));
    assert!(
        config_error(&SMALL.replace("\"PCA\", \"LDA\"]", "\"PCA\", \"X\"]"))
            .contains("not declared")
    );
    assert!(config_error(&SMALL.replace("kernel = { kind = \"rbf\" }", "")).contains("kernel"));
    assert!(
        config_error(&SMALL.replace("[fusion]", "[eval]\nalpha = 1.5\n\n[fusion]"))
            .contains("alpha")
    );
}

#[test]
fn config_hash_tracks_content() {
    let a = small();
    let mut b = small();
    assert_eq!(a.hash(), b.hash());
    b.seed = 4;
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn bundle_roundtrips_and_detects_tampering() {
    let config = small();
    let bundle = run_experiment(&config).unwrap().bundle;
    assert_eq!(bundle.num_classes, 6);
    for tag in ["PCA", "LDA", "KPCA", "Hybrid-M1", "Hybrid-M2"] {
        for cat in EvalCategory::ALL {
            let r = bundle.rank1(cat, tag).unwrap();
            assert!((0.0..=1.0).contains(&r));
        }
    }
    let json = bundle.to_json().unwrap();
    let back = ResultBundle::from_json(&json).unwrap();
    assert_eq!(back.to_json().unwrap(), json);

    let tampered = json.replacen("\"seed\":3", "\"seed\":5", 1);
    assert_ne!(tampered, json);
    assert!(ResultBundle::from_json(&tampered).is_err());

    let dir = tempfile::tempdir().unwrap();
    let files = emit_reports(&back, dir.path(), ReportOptions::from_bundle(&back)).unwrap();
    assert!(files.iter().all(|f| f.exists()));
    assert!(dir.path().join("rank1.csv").exists());
    assert!(dir.path().join("summary.json").exists());
    assert!(rank1_text(&back).contains("Hybrid-M2"));
}

#[test]
fn seeds_change_results_deterministically() {
    let a = run_experiment(&small()).unwrap().bundle.to_json().unwrap();
    let b = run_experiment(&small()).unwrap().bundle.to_json().unwrap();
    assert_eq!(a, b);
    let mut other = small();
    other.seed = 99;
    let c = run_experiment(&other).unwrap().bundle.to_json().unwrap();
    assert_ne!(a, c);
}

#[test]
fn sweep_covers_the_requested_range() {
    let report = sweep_dimensionality(&small(), 2, 5).unwrap();
    let pca: Vec<usize> = report
        .rows
        .iter()
        .filter(|r| r.algorithm == "PCA")
        .map(|r| r.t)
        .collect();
    assert_eq!(pca, vec![2, 3, 4, 5]);
    let csv = report.to_csv();
    assert!(csv.starts_with("t,algorithm,"));
    assert_eq!(csv.lines().count(), 1 + report.rows.len());
    assert!(sweep_dimensionality(&small(), 2, 10_000).is_err());
}

#[test]
fn model_container_survives_disk() {
    let config = small();
    let bundle = run_experiment(&config).unwrap().bundle;
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bundle.models.len(), 3);
    assert!(bundle
        .models
        .iter()
        .all(|m| bundle.algorithms.contains(&m.tag)));
    for container in &bundle.models {
        let path = dir.path().join(format!("{}.json", container.tag));
        container.save(&path).unwrap();
        let back = ModelContainer::load(&path).unwrap();
        assert_eq!(back.to_json().unwrap(), container.to_json().unwrap());
    }
}

fn write_gray(path: &Path, w: u32, h: u32, f: impl Fn(u32, u32) -> u8) {
    image::GrayImage::from_fn(w, h, |x, y| image::Luma([f(x, y)]))
        .save(path)
        .unwrap();
}

#[test]
fn images_load_from_names_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    write_gray(&dir.path().join("s1_1_neutral_1.png"), 4, 3, |x, y| {
        (10 * x + y) as u8
    });
    write_gray(
        &dir.path().join("s2_2_upper_occlusion_1.png"),
        8,
        6,
        |_, _| 77,
    );
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();

    let samples = load_image_dir(dir.path(), 3, 4).unwrap();
    assert_eq!(samples.len(), 2);
    assert_eq!(samples[0].subject_id, 1);
    assert_eq!(samples[0].pixels[..4], [0.0, 10.0, 20.0, 30.0]);
    assert_eq!(samples[0].pixels[4], 1.0);
    assert_eq!(samples[1].session, 2);
    assert!(samples[1].pixels.iter().all(|&p| (p - 77.0).abs() < 1e-9));

    let manifest = dir.path().join("manifest.csv");
    write_manifest(&samples, &manifest).unwrap();
    let opts = IngestOptions {
        rows: 3,
        cols: 4,
        equalize: false,
    };
    let again = load_with_manifest(dir.path(), &manifest, &opts).unwrap();
    assert_eq!(again.len(), 2);
    for (a, b) in samples.iter().zip(&again) {
        assert_eq!(
            (a.subject_id, a.session, a.category, a.index),
            (b.subject_id, b.session, b.category, b.index)
        );
        assert_eq!(a.pixels, b.pixels);
    }

    std::fs::write(dir.path().join("bad.png"), b"not an image").unwrap();
    std::fs::write(&manifest, "bad.png,1,1,neutral\n").unwrap();
    assert!(matches!(
        load_with_manifest(dir.path(), &manifest, &opts),
        Err(Error::Ingestion { .. })
    ));
    std::fs::write(&manifest, "s1_1_neutral_1.png,1,3,neutral\n").unwrap();
    assert!(load_with_manifest(dir.path(), &manifest, &opts).is_err());
}

#[test]
fn stored_model_dim_matches_training() {
    let x = facebench::data::build_data_matrix(
        &facebench::data::synth_gaussian_classes(&facebench::data::SyntheticSpec {
            num_classes: 3,
            samples_per_class: 5,
            ambient_dim: 10,
            between_scale: 1.0,
            within_scale: 1.0,
            seed: 1,
        })
        .unwrap(),
        true,
    )
    .unwrap();
    let m = StoredModel::Subspace(train_pca(&x, &DimensionalityPolicy::Fixed { t: 4 }).unwrap());
    assert_eq!(m.dim(), 4);
}
