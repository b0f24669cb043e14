//! Consolidated Markdown report of a run directory.
//!
//! Measured values and published reference values always sit in separate columns.

use std::fmt::Write as _;

use tuber_core::metrics::{ConfusionMatrix, CvSummary};
use tuber_nn::profile::{profile_from_csv, profile_to_markdown};
use tuber_nn::train::sweep::{reference_sweep_accuracy, REFERENCE_SWEEP_ACCURACY_N2_FIGURE};
use tuber_nn::train::{GridResult, SweepRow};
use tuber_nn::BackboneId;

use crate::config::{ExperimentConfig, Task};
use crate::error::CliError;
use crate::run::{read_confusion, read_json, read_text, MetricsFile, RunDir};

/// `(metric, summary key)` rows of the published comparison tables.
const METRICS: [(&str, &str); 4] =
    [("Accuracy", "accuracy"), ("F1 score", "f1_weighted"), ("Precision", "precision_weighted"), ("Recall", "recall_weighted")];

const PUBLISHED_ORDER: [BackboneId; 4] = [BackboneId::Vgg16, BackboneId::Resnet50, BackboneId::Densenet121, BackboneId::VitB16];

/// Published 5-fold sprout results, `[accuracy, F1, precision, recall]` as (mean, std).
pub fn published_sprout(backbone: BackboneId) -> Option<[(f64, f64); 4]> {
    match backbone {
        BackboneId::Vgg16 => Some([(0.9181, 0.0544), (0.9118, 0.0624), (0.9291, 0.0432), (0.91813, 0.0545)]),
        BackboneId::Resnet50 => Some([(0.9771, 0.0187), (0.9773, 0.0182), (0.9793, 0.0159), (0.9771, 0.0018)]),
        BackboneId::Densenet121 => Some([(0.9803, 0.0137), (0.9804, 0.0137), (0.9816, 0.0126), (0.9803, 0.0137)]),
        BackboneId::VitB16 => Some([(0.9804, 0.0179), (0.9803, 0.0181), (0.9806, 0.0181), (0.9804, 0.0179)]),
        BackboneId::TinyCnn | BackboneId::TinyVit => None,
    }
}

/// Published 5-fold results for five weight-loss classes, same layout.
pub fn published_five_class(backbone: BackboneId) -> Option<[(f64, f64); 4]> {
    match backbone {
        BackboneId::Densenet121 => Some([(0.8918, 0.0298), (0.8908, 0.0308), (0.9015, 0.0236), (0.8918, 0.0298)]),
        BackboneId::Vgg16 => Some([(0.7213, 0.0418), (0.6911, 0.0522), (0.7074, 0.0811), (0.7213, 0.0418)]),
        BackboneId::Resnet50 => Some([(0.8131, 0.0377), (0.8043, 0.0462), (0.8545, 0.0287), (0.8131, 0.0377)]),
        BackboneId::VitB16 => Some([(0.8984, 0.0618), (0.8975, 0.0627), (0.9045, 0.0618), (0.8984, 0.0618)]),
        BackboneId::TinyCnn | BackboneId::TinyVit => None,
    }
}

/// Expert graders on the 4-class task: accuracy, precision, recall, F1.
pub const HUMAN_BENCHMARK: [(&str, f64); 4] = [("Accuracy", 0.9020), ("Precision", 0.9139), ("Recall", 0.9020), ("F1 score", 0.9079)];

fn published_for(config: &ExperimentConfig) -> Option<(&'static str, fn(BackboneId) -> Option<[(f64, f64); 4]>)> {
    match (config.task, config.n_classes) {
        (Task::Sprout, _) => Some(("sprout / non-sprout", published_sprout)),
        (Task::ShelfLife, 5) => Some(("5 weight-loss classes", published_five_class)),
        _ => None,
    }
}

fn metrics_table(out: &mut String, config: &ExperimentConfig, summary: &CvSummary) {
    let published = published_for(config);
    let mut header = String::from("| Metric | Measured mean | Measured std |");
    let mut rule = String::from("|---|---|---|");
    if published.is_some() {
        for b in PUBLISHED_ORDER {
            let _ = write!(header, " Published {b} |");
            rule.push_str("---|");
        }
    }
    let _ = writeln!(out, "{header}\n{rule}");
    for (i, (name, key)) in METRICS.iter().enumerate() {
        let Some(m) = summary.metrics.get(*key) else { continue };
        let _ = write!(out, "| {name} | {:.4} | {:.4} |", m.mean, m.std);
        if let Some((_, table)) = published {
            for b in PUBLISHED_ORDER {
                let (mean, std) = table(b).expect("published backbone")[i];
                let _ = write!(out, " {mean:.4} ± {std:.4} |");
            }
        }
        out.push('\n');
    }
    for key in ["balanced_accuracy", "mcc"] {
        if let Some(m) = summary.metrics.get(key) {
            let _ = write!(out, "| {key} | {:.4} | {:.4} |", m.mean, m.std);
            if published.is_some() {
                out.push_str(&" n/a |".repeat(PUBLISHED_ORDER.len()));
            }
            out.push('\n');
        }
    }
    if let Some((what, _)) = published {
        let _ = writeln!(out, "\nPublished columns: 5-fold results on the private dataset ({what}); reference values only.");
    }
}

fn confusion_table(out: &mut String, m: &ConfusionMatrix) {
    out.push_str("| true \\ predicted |");
    for p in 1..=m.n {
        let _ = write!(out, " {p} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(m.n));
    out.push('\n');
    for t in 0..m.n {
        let _ = write!(out, "| {} |", t + 1);
        for p in 0..m.n {
            let _ = write!(out, " {} |", m.counts[t][p]);
        }
        out.push('\n');
    }
}

/// Builds the report text from whatever artifacts the run directory holds.
pub fn build_report(run: &RunDir) -> Result<String, CliError> {
    let config: ExperimentConfig = read_json(&run.config())?;
    let has_metrics = run.metrics().exists();
    let has_sweep = run.sweep_json().exists();
    if !has_metrics && !has_sweep {
        return Err(CliError::data("MissingArtifacts", format!("{} has neither metrics.json nor sweep.json", run.root.display())));
    }
    let mut out = String::new();
    let run_id = config.run_id.clone().unwrap_or_else(|| run.root.display().to_string());
    let _ = writeln!(out, "# Run report: {run_id}\n");
    let task = match config.task {
        Task::Sprout => "sprout detection",
        Task::ShelfLife => "shelf-life classes",
    };
    let spec = config.model_spec();
    out.push_str("| Setting | Value |\n|---|---|\n");
    let _ = writeln!(out, "| Task | {task} |");
    let _ = writeln!(out, "| Classes | {} |", config.n_classes);
    let _ = writeln!(out, "| Backbone | {} |", config.backbone);
    let _ = writeln!(out, "| Head | {} |", spec.head.label());
    let _ = writeln!(out, "| Pretrained | {} |", spec.pretrained);
    let _ = writeln!(out, "| Freeze | {:?} |", spec.freeze);
    let _ = writeln!(out, "| Folds | {} |", config.k_folds);
    let _ = writeln!(out, "| Max epochs | {} |", config.train.max_epochs);
    let _ = writeln!(out, "| Seed | {} |", config.seed);
    out.push('\n');

    if has_metrics {
        let metrics: MetricsFile = read_json(&run.metrics())?;
        out.push_str("## Cross-validated metrics\n\n");
        metrics_table(&mut out, &config, &metrics.summary);

        out.push_str("\n## Per-fold results\n\n| Fold | Accuracy | F1 (weighted) | Train time (s) | Best epoch | Epochs run |\n|---|---|---|---|---|---|\n");
        for f in &metrics.per_fold {
            let _ = writeln!(
                out,
                "| {} | {:.4} | {:.4} | {:.1} | {} | {} |",
                f.fold, f.report.accuracy, f.report.weighted_avg.f1, f.train_seconds, f.best_epoch, f.epochs_run
            );
        }

        let folds = run.fold_numbers();
        let matrices: Vec<ConfusionMatrix> = folds
            .iter()
            .filter(|&&k| run.fold(k).join("confusion.csv").exists())
            .map(|&k| read_confusion(&run.fold(k).join("confusion.csv")))
            .collect::<Result<_, _>>()?;
        if let Some(first) = matrices.first() {
            let mut total = ConfusionMatrix::zeros(first.n);
            for m in matrices.iter().filter(|m| m.n == first.n) {
                for t in 0..m.n {
                    for p in 0..m.n {
                        total.counts[t][p] += m.counts[t][p];
                    }
                }
            }
            let _ = writeln!(out, "\n## Confusion matrix (all {} folds, rows = true class)\n", matrices.len());
            confusion_table(&mut out, &total);
        }

        let acc = metrics.summary.accuracy();
        out.push_str("\n## Human benchmark\n\n| Metric | Measured (this run) | Published human experts (4 classes) |\n|---|---|---|\n");
        for (name, value) in HUMAN_BENCHMARK {
            let key = METRICS.iter().find(|(n, _)| *n == name).map(|(_, k)| *k).unwrap_or("accuracy");
            let measured = metrics.summary.metrics.get(key).map_or("n/a".to_string(), |m| format!("{:.4}", m.mean));
            let _ = writeln!(out, "| {name} | {measured} | {value:.4} |");
        }
        let _ = writeln!(
            out,
            "\nMeasured accuracy {:.4} ({} classes, {}) against the published human benchmark accuracy 0.9020 (4 classes).",
            acc.mean, config.n_classes, config.backbone
        );
    }

    if has_sweep {
        let rows: Vec<SweepRow> = read_json(&run.sweep_json())?;
        out.push_str("\n## Accuracy by number of classes\n\n| Classes | Samples | Measured mean | Measured std | Published accuracy |\n|---|---|---|---|---|\n");
        for r in &rows {
            let a = r.summary.accuracy();
            let published = reference_sweep_accuracy(r.n_classes).map_or("n/a".to_string(), |p| format!("{:.4}", p / 100.0));
            let _ = writeln!(out, "| {} | {} | {:.4} | {:.4} | {published} |", r.n_classes, r.n_samples, a.mean, a.std);
        }
        let _ = writeln!(
            out,
            "\nThe published 2-class value also appears as {:.4} in the class-count figure.",
            REFERENCE_SWEEP_ACCURACY_N2_FIGURE / 100.0
        );
    }

    if run.grid_results().exists() {
        let results: Vec<GridResult> = read_json(&run.grid_results())?;
        out.push_str("\n## Grid search\n\n| # | Configuration | Mean accuracy | Std |\n|---|---|---|---|\n");
        for (i, r) in results.iter().enumerate() {
            let a = r.summary.accuracy();
            let _ = writeln!(out, "| {} | {} | {:.4} | {:.4} |", i + 1, r.point.label(), a.mean, a.std);
        }
    }

    if run.profile().exists() {
        let rows = profile_from_csv(&read_text(&run.profile())?)
            .map_err(|e| CliError::data("MalformedArtifact", format!("{}: {e}", run.profile().display())))?;
        out.push_str("\n## Computational cost\n\n");
        out.push_str(&profile_to_markdown(&rows));
        out.push_str("\nMeasured timings depend on the local CPU; published timings came from different hardware.\n");
    }

    let mut plots: Vec<String> = std::fs::read_dir(run.plots())
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| e.file_name().to_str().map(str::to_string))
        .filter(|n| n.ends_with(".png"))
        .collect();
    plots.sort();
    if !plots.is_empty() {
        out.push_str("\n## Plots\n\n");
        for p in plots {
            let _ = writeln!(out, "![{}](plots/{p})\n", p.trim_end_matches(".png"));
        }
    }
    Ok(out)
}
