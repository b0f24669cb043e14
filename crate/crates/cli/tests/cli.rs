use std::path::Path;
use std::process::{Command, Output};

use tuber_cli::run::{read_json, MetricsFile};

fn tuber(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tuber")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tuber(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = tuber(dir, args);
    (out.status.code().unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn dataset(dir: &Path) {
    ok(dir, &["synth", "--out", "data", "--n-potatoes", "6", "--seed", "1"]);
}

const QUICK: &str = r#"{"task": "shelf_life", "head": {"hidden_widths": []}, "train": {"max_epochs": 1}, "k_folds": 2, "seed": 4}"#;

#[test]
fn nine_classes_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let (code, stderr) = fails(dir.path(), &["label", "--manifest", "data/manifest.csv", "--classes", "9", "--out", "l.json"]);
    assert_eq!(code, 2);
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("error: UnsupportedClassCount: "), "{stderr}");
    assert!(!dir.path().join("l.json").exists());
}

#[test]
fn error_classes_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stderr) = fails(dir.path(), &["frobnicate"]);
    assert_eq!(code, 2);
    assert!(stderr.starts_with("error: InvalidArguments: "), "{stderr}");
    let (code, stderr) = fails(dir.path(), &["label", "--manifest", "missing.csv", "--out", "l.json"]);
    assert_eq!(code, 3);
    assert!(stderr.starts_with("error: ManifestUnreadable: "), "{stderr}");
    let (code, stderr) = fails(dir.path(), &["report", "--run", "nowhere"]);
    assert_eq!(code, 3);
    assert!(stderr.starts_with("error: MissingArtifacts: "), "{stderr}");
}

#[test]
fn five_class_pipeline_builds_a_complete_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d);
    ok(d, &["label", "--manifest", "data/manifest.csv", "--classes", "5", "--out", "labels.json"]);
    std::fs::write(d.join("quick.json"), QUICK).unwrap();
    ok(d, &["train", "--manifest", "data/manifest.csv", "--labels", "labels.json", "--config", "quick.json", "--out", "runs/r"]);

    let run = d.join("runs/r");
    for f in ["config.json", "labels.json", "metrics.json", "folds/assignments.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    for k in 1..=2 {
        for f in ["checkpoint.bin", "history.csv", "confusion.csv", "predictions.csv"] {
            assert!(run.join(format!("folds/fold_{k}/{f}")).exists(), "fold {k} {f}");
        }
    }
    let mut plots: Vec<String> =
        std::fs::read_dir(run.join("plots")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    plots.sort();
    assert_eq!(plots, ["accuracy.png", "confusion_fold_1.png", "confusion_fold_2.png", "history_fold_1.png", "history_fold_2.png"]);
    let config: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["n_classes"], 5);
    assert_eq!(config["backbone"], "TINY_CNN");

    // evaluate reproduces the metrics and the plots byte for byte
    let trained: MetricsFile = read_json(&run.join("metrics.json")).unwrap();
    let before = std::fs::read(run.join("plots/confusion_fold_1.png")).unwrap();
    let history_before = std::fs::read(run.join("plots/history_fold_2.png")).unwrap();
    ok(d, &["evaluate", "--run", "runs/r"]);
    let evaluated: MetricsFile = read_json(&run.join("metrics.json")).unwrap();
    for (a, b) in trained.per_fold.iter().zip(&evaluated.per_fold) {
        assert_eq!(a.report, b.report, "fold {}", a.fold);
    }
    assert_eq!(std::fs::read(run.join("plots/confusion_fold_1.png")).unwrap(), before);
    assert_eq!(std::fs::read(run.join("plots/history_fold_2.png")).unwrap(), history_before);

    let stdout = ok(d, &["explain", "--run", "runs/r", "--fold", "2", "--image", "data/images/P01_150.png", "--class", "5"]);
    assert!(stdout.contains("layer block1"), "{stdout}");
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("heatmaps/P01_150_class5.json")).unwrap()).unwrap();
    assert_eq!(sidecar["target_class"], 5);
    assert!(sidecar.get("localization_score").is_none());
    let (code, stderr) = fails(d, &["explain", "--run", "runs/r", "--fold", "1", "--image", "data/images/P01_150.png", "--class", "6"]);
    assert_eq!(code, 2, "{stderr}");
    let (code, stderr) = fails(d, &["explain", "--run", "runs/r", "--fold", "1", "--image", "data/images/P01_150.png", "--class", "1", "--layer", "gap"]);
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.starts_with("error: NonSpatialLayer: "), "{stderr}");

    ok(d, &["profile", "--backbones", "TINY_CNN,tiny_vit", "--timed", "0", "--out", "runs/r/profile.csv"]);
    ok(d, &["report", "--run", "runs/r"]);
    let report = std::fs::read_to_string(run.join("report.md")).unwrap();
    assert!(report.contains("Published DENSENET121"));
    assert!(report.contains("| TINY_VIT |"));
}

#[test]
fn sprout_report_compares_against_human_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d);
    ok(d, &["label", "--manifest", "data/manifest.csv", "--sprout", "--out", "sprout.json"]);
    std::fs::write(d.join("sprout.cfg"), QUICK.replace("shelf_life", "sprout")).unwrap();
    ok(d, &["train", "--manifest", "data/manifest.csv", "--labels", "sprout.json", "--config", "sprout.cfg", "--out", "runs/s"]);
    ok(d, &["report", "--run", "runs/s", "--out", "runs/s/summary.md"]);
    let report = std::fs::read_to_string(d.join("runs/s/summary.md")).unwrap();
    assert!(report.contains("## Confusion matrix"));
    assert!(report.contains("| true \\ predicted | 1 | 2 |"));
    assert!(report.contains("0.9020"));
    assert!(report.contains("| Accuracy |") && report.contains("0.9803 ± 0.0137"));
}

#[test]
fn grid_search_writes_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d);
    ok(d, &["label", "--manifest", "data/manifest.csv", "--classes", "2", "--out", "labels.json"]);
    let config = r#"{"head": {"hidden_widths": []}, "train": {"max_epochs": 1}, "k_folds": 2, "seed": 2,
        "grid": {"hidden_widths": [[], [16], [16, 16], [16, 16, 16]], "learning_rate": null}}"#;
    std::fs::write(d.join("grid.json"), config).unwrap();
    ok(d, &["train", "--manifest", "data/manifest.csv", "--labels", "labels.json", "--config", "grid.json", "--out", "runs/g", "--grid"]);
    let results: Vec<serde_json::Value> = read_json(&d.join("runs/g/grid_results.json")).unwrap();
    assert_eq!(results.len(), 4);
    assert!(d.join("runs/g/plots/head_ablation.png").exists());
    assert!(d.join("runs/g/folds/fold_2/checkpoint.bin").exists());
    assert!(d.join("runs/g/grid/point_4/metrics.json").exists());
}

#[test]
fn class_sweep_writes_table_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d);
    std::fs::write(d.join("quick.json"), QUICK).unwrap();
    let stdout = ok(d, &["sweep-classes", "--manifest", "data/manifest.csv", "--config", "quick.json", "--min", "2", "--max", "3", "--out", "runs/w"]);
    assert_eq!(stdout.lines().count(), 2);
    let csv = std::fs::read_to_string(d.join("runs/w/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().ends_with(",0.9934"));
    assert!(d.join("runs/w/plots/sweep.png").exists());
    ok(d, &["report", "--run", "runs/w"]);
    assert!(std::fs::read_to_string(d.join("runs/w/report.md")).unwrap().contains("## Accuracy by number of classes"));
    let (code, _) = fails(d, &["sweep-classes", "--manifest", "data/manifest.csv", "--min", "2", "--max", "9"]);
    assert_eq!(code, 2);
}
