//! Run directory layout and the artifacts written into it.
//!
//! ```text
//! <run>/config.json
//! <run>/labels.json
//! <run>/folds/assignments.csv
//! <run>/folds/fold_<k>/{checkpoint.bin,history.csv,confusion.csv,predictions.csv}
//! <run>/metrics.json
//! <run>/plots/*.png
//! <run>/heatmaps/*.png
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tuber_core::metrics::{ConfusionMatrix, CvSummary, MetricsReport};
use tuber_core::{LabeledSample, SampleKey};
use tuber_nn::train::{EpochRecord, FoldOutcome, FoldPlan, GridResult, History, Sample, StopReason, SweepRow};

use crate::error::CliError;
use crate::plots::{bar_chart, confusion_heatmap, history_plot, line_chart, Bar, Series, BLUE, GRAY};

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn labels(&self) -> PathBuf {
        self.root.join("labels.json")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.json")
    }
    pub fn folds(&self) -> PathBuf {
        self.root.join("folds")
    }
    pub fn assignments(&self) -> PathBuf {
        self.folds().join("assignments.csv")
    }
    pub fn fold(&self, k: usize) -> PathBuf {
        self.folds().join(format!("fold_{k}"))
    }
    pub fn checkpoint(&self, k: usize) -> PathBuf {
        self.fold(k).join("checkpoint.bin")
    }
    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
    pub fn heatmaps(&self) -> PathBuf {
        self.root.join("heatmaps")
    }
    pub fn grid_results(&self) -> PathBuf {
        self.root.join("grid_results.json")
    }
    pub fn sweep_json(&self) -> PathBuf {
        self.root.join("sweep.json")
    }
    pub fn sweep_csv(&self) -> PathBuf {
        self.root.join("sweep.csv")
    }
    pub fn profile(&self) -> PathBuf {
        self.root.join("profile.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.md")
    }

    /// Fold numbers with a directory under `folds/`, ascending.
    pub fn fold_numbers(&self) -> Vec<usize> {
        let mut out: Vec<usize> = std::fs::read_dir(self.folds())
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| e.file_name().to_str()?.strip_prefix("fold_")?.parse().ok())
            .collect();
        out.sort_unstable();
        out
    }
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("value serializes") + "\n"))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::data("MissingArtifacts", format!("{}: {e}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::data("MalformedArtifact", format!("{}: {e}", path.display())))
}

pub fn read_labels(path: &Path) -> Result<Vec<LabeledSample>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data("LabelsUnreadable", format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data("MalformedLabels", format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub report: MetricsReport,
    pub train_seconds: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub per_fold: Vec<FoldMetrics>,
    pub summary: CvSummary,
}

pub fn fold_metrics(outcome: &FoldOutcome) -> FoldMetrics {
    FoldMetrics {
        fold: outcome.fold,
        report: outcome.report.clone(),
        train_seconds: outcome.train_seconds,
        best_epoch: outcome.history.best_epoch,
        epochs_run: outcome.history.epochs.len(),
        stop_reason: outcome.history.stop_reason,
    }
}

pub fn write_assignments(path: &Path, plan: &FoldPlan) -> Result<(), CliError> {
    let mut out = String::from("potato_id,day,fold\n");
    for (key, fold) in &plan.assignments {
        out.push_str(&format!("{},{},{fold}\n", key.potato_id, key.day));
    }
    write_text(path, &out)
}

pub fn read_assignments(path: &Path) -> Result<Vec<(SampleKey, usize)>, CliError> {
    let text = read_text(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let bad = || CliError::data("MalformedArtifact", format!("{}: {l}", path.display()));
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(bad());
            }
            Ok((SampleKey::new(f[0], f[1].parse().map_err(|_| bad())?), f[2].parse().map_err(|_| bad())?))
        })
        .collect()
}

/// Checkpoint, history, confusion matrix and per-sample predictions of one fold.
pub fn write_fold(dir: &Path, outcome: &FoldOutcome, samples: &[Sample]) -> Result<(), CliError> {
    create_dir(dir)?;
    tuber_nn::save_model(&outcome.handle, &dir.join("checkpoint.bin"))?;
    write_text(&dir.join("history.csv"), &outcome.history.to_csv())?;
    write_text(&dir.join("confusion.csv"), &outcome.confusion.to_csv())?;
    let mut preds = String::from("potato_id,day,true_class,predicted_class\n");
    for &(i, p) in &outcome.predictions {
        let s = &samples[i];
        preds.push_str(&format!("{},{},{},{p}\n", s.key.potato_id, s.key.day, s.label));
    }
    write_text(&dir.join("predictions.csv"), &preds)
}

pub fn read_confusion(path: &Path) -> Result<ConfusionMatrix, CliError> {
    ConfusionMatrix::from_csv(&read_text(path)?).map_err(|e| CliError::data("MalformedArtifact", format!("{}: {e}", path.display())))
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>, CliError> {
    History::from_csv(&read_text(path)?).map_err(|e| CliError::data("MalformedArtifact", format!("{}: {e}", path.display())))
}

fn save_png(img: &image::RgbImage, path: &Path) -> Result<PathBuf, CliError> {
    img.save(path).map_err(|e| CliError::runtime("IoError", format!("{}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

/// Mean ± std bars of the headline metrics.
pub fn summary_bars(summary: &CvSummary) -> Vec<Bar> {
    [("accuracy", "accuracy"), ("precision", "precision_weighted"), ("recall", "recall_weighted"), ("F1", "f1_weighted")]
        .iter()
        .filter_map(|(label, key)| summary.metrics.get(*key).map(|m| Bar { label: label.to_string(), mean: m.mean, std: m.std }))
        .collect()
}

pub fn sweep_plot(rows: &[SweepRow]) -> image::RgbImage {
    let measured: Vec<(f64, f64)> = rows.iter().map(|r| (r.n_classes as f64, r.summary.accuracy().mean)).collect();
    let published: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| tuber_nn::train::sweep::reference_sweep_accuracy(r.n_classes).map(|a| (r.n_classes as f64, a / 100.0)))
        .collect();
    line_chart(
        "Accuracy by number of classes",
        "number of classes",
        "mean accuracy",
        &[
            Series { label: "measured".into(), points: measured, color: BLUE },
            Series { label: "published".into(), points: published, color: GRAY },
        ],
        Some((0.0, 1.0)),
    )
}

/// Renders every plot the run's artifacts support and returns the written paths.
pub fn render_plots(run: &RunDir) -> Result<Vec<PathBuf>, CliError> {
    let folds = run.fold_numbers();
    let has_metrics = run.metrics().exists();
    let has_sweep = run.sweep_json().exists();
    if folds.is_empty() && !has_metrics && !has_sweep {
        return Err(CliError::data("MissingArtifacts", format!("{} has no metrics, folds or sweep results", run.root.display())));
    }
    create_dir(&run.plots())?;
    let mut written = Vec::new();
    for &k in &folds {
        let dir = run.fold(k);
        if dir.join("history.csv").exists() {
            let records = read_history(&dir.join("history.csv"))?;
            written.push(save_png(&history_plot(k, &records), &run.plots().join(format!("history_fold_{k}.png")))?);
        }
        if dir.join("confusion.csv").exists() {
            let m = read_confusion(&dir.join("confusion.csv"))?;
            let img = confusion_heatmap(&format!("Fold {k} confusion"), &m);
            written.push(save_png(&img, &run.plots().join(format!("confusion_fold_{k}.png")))?);
        }
    }
    if has_metrics {
        let metrics: MetricsFile = read_json(&run.metrics())?;
        let img = bar_chart("Cross-validated performance", "mean +/- std", &summary_bars(&metrics.summary), (0.0, 1.0));
        written.push(save_png(&img, &run.plots().join("accuracy.png"))?);
    }
    if run.grid_results().exists() {
        let results: Vec<GridResult> = read_json(&run.grid_results())?;
        let bars: Vec<Bar> = results
            .iter()
            .map(|r| {
                let a = r.summary.accuracy();
                Bar { label: r.point.label(), mean: a.mean, std: a.std }
            })
            .collect();
        written.push(save_png(&bar_chart("Head ablation", "mean accuracy", &bars, (0.0, 1.0)), &run.plots().join("head_ablation.png"))?);
    }
    if has_sweep {
        let rows: Vec<SweepRow> = read_json(&run.sweep_json())?;
        written.push(save_png(&sweep_plot(&rows), &run.plots().join("sweep.png"))?);
    }
    Ok(written)
}
