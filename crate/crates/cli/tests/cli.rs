use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 2
output_dir = "out"

[data]
source = "synthetic"
num_classes = 5
ambient_dim = 20

[[algorithms]]
tag = "PCA"
kind = "pca"
metric = "l1"

[[algorithms]]
tag = "LDA"
kind = "lda"
metric = "mahalanobis"

[fusion]
members = ["PCA", "LDA"]
methods = ["method2"]
"#;

fn facebench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facebench"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FACEBENCH_OUTPUT_DIR")
        .output()
        .unwrap()
}

#[test]
fn run_report_sweep_and_fuse() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("config.toml"), CONFIG).unwrap();

    let run = facebench(&["--threads", "2", "run", "config.toml"], root);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("Hybrid-M2"));
    for f in [
        "bundle.json",
        "timings.json",
        "rank1.csv",
        "rank1.txt",
        "summary.json",
    ] {
        assert!(root.join("out").join(f).exists(), "missing {f}");
    }

    let report = facebench(&["report", "out/bundle.json", "--out", "again"], root);
    assert!(
        report.status.success(),
        "{}",
        String::from_utf8_lossy(&report.stderr)
    );
    assert_eq!(
        fs::read(root.join("out/rank1.csv")).unwrap(),
        fs::read(root.join("again/rank1.csv")).unwrap()
    );

    let sweep = facebench(&["sweep", "config.toml", "--t", "1..3"], root);
    assert!(
        sweep.status.success(),
        "{}",
        String::from_utf8_lossy(&sweep.stderr)
    );
    assert!(String::from_utf8(sweep.stdout)
        .unwrap()
        .starts_with("t,algorithm,"));

    let mut tables: Vec<String> = fs::read_dir(root.join("out/scores"))
        .unwrap()
        .map(|e| e.unwrap().path().display().to_string())
        .filter(|p| p.contains("expression_1_") && !p.contains("Hybrid"))
        .collect();
    tables.sort();
    assert_eq!(tables.len(), 2, "{tables:?}");
    let fused = facebench(
        &[
            "fuse",
            &tables[0],
            &tables[1],
            "--weights",
            "explicit",
            "--values",
            "0.5,0.5",
        ],
        root,
    );
    assert!(
        fused.status.success(),
        "{}",
        String::from_utf8_lossy(&fused.stderr)
    );
    assert!(!fused.stdout.is_empty());

    let bad = facebench(
        &[
            "fuse",
            &tables[0],
            &tables[1],
            "--weights",
            "method2",
            "--accuracies",
            "80",
        ],
        root,
    );
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error:"));
}

#[test]
fn output_dir_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.toml"), CONFIG).unwrap();
    let target = dir.path().join("elsewhere");
    let out = Command::new(env!("CARGO_BIN_EXE_facebench"))
        .args(["run", "config.toml"])
        .current_dir(dir.path())
        .env("FACEBENCH_OUTPUT_DIR", &target)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(target.join("bundle.json").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let missing = facebench(&["run", "nope.toml"], dir.path());
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("config"));
    fs::write(dir.path().join("c.toml"), CONFIG).unwrap();
    let range = facebench(&["sweep", "c.toml", "--t", "7"], dir.path());
    assert!(!range.status.success());
    let unknown = facebench(&["frobnicate"], dir.path());
    assert!(!unknown.status.success());
}
