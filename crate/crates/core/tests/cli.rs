use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_cardioseg");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn phantom(dir: &Path, seed: &str) -> std::path::PathBuf {
    let out = dir.join("cohort");
    let o = run(&[
        "phantom",
        "--cect",
        "1",
        "--ncct",
        "1",
        "--prone",
        "1",
        "--seed",
        seed,
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn infer_with(dir: &Path, mode: &str) -> Output {
    let cohort = phantom(dir, "3");
    let template = format!(
        "{BIN} toy-predictor --mode {mode} --input {{input}} --sidecar {{sidecar}} --output {{output}} --classes {{classes}}"
    );
    run(&[
        "infer",
        "--manifest",
        path(&cohort.join("manifest.csv")),
        "--out",
        path(&dir.join(mode)),
        "--patch",
        "96,96,64",
        "--predictor-command",
        &template,
    ])
}

#[test]
fn phantom_cohort_is_reproducible() {
    let (a, b, c) = (
        TempDir::new().unwrap(),
        TempDir::new().unwrap(),
        TempDir::new().unwrap(),
    );
    let (pa, pb, pc) = (phantom(a.path(), "5"), phantom(b.path(), "5"), phantom(c.path(), "6"));
    for name in [
        "manifest.csv",
        "case_000_image.nii.gz",
        "case_001_mask.nii.gz",
        "case_001_dose.nii.gz",
    ] {
        let x = std::fs::read(pa.join(name)).unwrap();
        assert_eq!(x, std::fs::read(pb.join(name)).unwrap(), "{name}");
        if name.ends_with("image.nii.gz") {
            assert_ne!(x, std::fs::read(pc.join(name)).unwrap());
        }
    }
}

#[test]
fn uniform_predictor_is_accepted() {
    let dir = TempDir::new().unwrap();
    let o = infer_with(dir.path(), "uniform");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // all classes tie, so every voxel goes to background
    let mask = cardioseg::volume::load_label_mask(dir.path().join("uniform/case_000_pred.nii.gz")).unwrap();
    assert!(mask.labels().iter().all(|&l| l == 0));
}

#[test]
fn slightly_off_simplex_scores_are_renormalized() {
    let dir = TempDir::new().unwrap();
    let o = infer_with(dir.path(), "sum1005");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn protocol_violations_fail_the_case() {
    for (mode, needle) in [
        ("wrong-size", "expected"),
        ("nan", "non-finite"),
        ("fail", "asked to fail"),
    ] {
        let dir = TempDir::new().unwrap();
        let o = infer_with(dir.path(), mode);
        assert!(!o.status.success(), "{mode} succeeded");
        let stderr = String::from_utf8_lossy(&o.stderr).to_lowercase();
        assert!(
            stderr.contains("case_000") && stderr.contains(needle),
            "{mode}: {stderr}"
        );
        assert!(dir.path().join(mode).join("infer_errors.csv").exists());
    }
}

#[test]
fn missing_predictor_command_fails() {
    let dir = TempDir::new().unwrap();
    let cohort = phantom(dir.path(), "3");
    let o = run(&[
        "infer",
        "--manifest",
        path(&cohort.join("manifest.csv")),
        "--out",
        path(&dir.path().join("out")),
        "--predictor-command",
        "no-such-predictor-binary {input} {output}",
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("case_000"));
}

#[test]
fn oracle_report_pipeline() {
    let dir = TempDir::new().unwrap();
    let cohort = phantom(dir.path(), "4");
    let infer = dir.path().join("infer");
    let o = run(&[
        "infer",
        "--oracle",
        "--manifest",
        path(&cohort.join("manifest.csv")),
        "--out",
        path(&infer),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = dir.path().join("report");
    let o = run(&[
        "report",
        "--manifest",
        path(&infer.join("manifest.csv")),
        "--out",
        path(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(report.join("summary.md")).unwrap();
    assert_eq!(summary.matches("1.00 ±0.00").count(), 8, "{summary}");
    assert!(report.join("report.md").exists());
    assert!(report.join("dose_table.md").exists());
}

#[test]
fn split_and_kfold_write_json() {
    let dir = TempDir::new().unwrap();
    let out = dir.path();
    let o = run(&[
        "phantom",
        "--records-only",
        "--cect",
        "56",
        "--ncct",
        "124",
        "--out",
        path(out),
    ]);
    assert!(o.status.success());
    let manifest = out.join("manifest.csv");
    let o = run(&[
        "split",
        "--manifest",
        path(&manifest),
        "--cect",
        "32",
        "--ncct",
        "32",
        "--folds",
        "4",
        "--seed",
        "9",
        "--out",
        path(out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let split: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("split.json")).unwrap()).unwrap();
    assert_eq!(split["train"].as_array().unwrap().len(), 64);
    assert_eq!(split["holdout"].as_array().unwrap().len(), 116);
    assert_eq!(split["folds"].as_array().unwrap().len(), 4);

    let o = run(&[
        "split",
        "--manifest",
        path(&manifest),
        "--cect",
        "57",
        "--ncct",
        "32",
        "--out",
        path(out),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("CECT"));

    let o = run(&["kfold", "-k", "3", "--manifest", path(&manifest), "--out", path(out)]);
    assert!(o.status.success());
    let folds: Vec<Vec<String>> = serde_json::from_slice(&std::fs::read(out.join("folds.json")).unwrap()).unwrap();
    assert_eq!(folds.iter().map(Vec::len).collect::<Vec<_>>(), [60, 60, 60]);
}

#[test]
fn evaluate_on_header_only_manifest_fails() {
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("manifest.csv");
    std::fs::write(
        &manifest,
        "case_id,image_path,mask_manual_path,mask_pred_path,dose_path,contrast,position,age,sex,bmi\n",
    )
    .unwrap();
    let o = run(&["evaluate", "--manifest", path(&manifest), "--out", path(dir.path())]);
    assert!(!o.status.success());
}
