use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use tuber_core::labeling::{build_class_scheme, exclude_censored, label_dataset, MAX_CLASSES, MIN_CLASSES};
use tuber_core::metrics::{aggregate_folds, confusion_matrix, metrics_from_confusion};
use tuber_core::synth::{generate_synthetic_dataset, SynthConfig};
use tuber_core::{load_manifest, DatasetManifest, LabeledSample, SampleKey};
use tuber_nn::explain::{grad_cam, localization_score, mask_from_gray, overlay, HeatmapSidecar};
use tuber_nn::profile::{build_profile_table, profile_to_csv, profile_to_markdown, ProfileConfig};
use tuber_nn::train::augment::normalize;
use tuber_nn::train::{
    class_count_sweep, cross_validate, evaluate_samples, grid_search, resize_eval, CvEvent, Grid, ImageStore, Sample,
    SweepEvent,
};
use tuber_nn::{load_model, BackboneId};

use crate::config::{default_run_id, ExperimentConfig, Task};
use crate::error::CliError;
use crate::report::build_report;
use crate::run::{
    create_dir, fold_metrics, read_assignments, read_history, read_json, read_labels, render_plots, write_assignments,
    write_fold, write_json, write_text, FoldMetrics, MetricsFile, RunDir,
};

#[derive(Debug, Parser)]
#[command(name = "tuber", version, about = "Potato sprout and shelf-life grading pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic image/weight dataset with ground truth
    Synth(SynthArgs),
    /// Label every observation of a manifest
    Label(LabelArgs),
    /// Cross-validate a classifier, or grid search its head and learning rate
    Train(TrainArgs),
    /// Recompute metrics, confusion matrices and plots from a run's checkpoints
    Evaluate(RunArgs),
    /// Cross-validated accuracy for a range of class counts
    SweepClasses(SweepArgs),
    /// Grad-CAM heatmap of one image
    Explain(ExplainArgs),
    /// Parameter count, MACs and latency per backbone
    Profile(ProfileArgs),
    /// Markdown report of a run
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_potatoes: Option<usize>,
    /// Storage horizon in days
    #[arg(long)]
    pub horizon: Option<u32>,
    /// Days between observations
    #[arg(long)]
    pub interval: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub image_size: Option<u32>,
    /// Mean day of the first sprout
    #[arg(long)]
    pub sprout_onset: Option<f64>,
    /// Half-width of the uniform spread of sprout onset days
    #[arg(long)]
    pub sprout_jitter: Option<f64>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Label sprouted / non-sprouted instead of weight-loss classes
    #[arg(long)]
    pub sprout: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory; runs/<run_id> when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub grid: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub run: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub min: usize,
    #[arg(long, default_value_t = 8)]
    pub max: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub fold: usize,
    #[arg(long)]
    pub image: PathBuf,
    /// 1-based class whose score is explained
    #[arg(long)]
    pub class: usize,
    #[arg(long)]
    pub layer: Option<String>,
    /// Binary mask of the expected region; adds a localization score to the sidecar
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Fraction of the hottest pixels scored against the mask
    #[arg(long, default_value_t = 0.1)]
    pub top_fraction: f64,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Comma-separated backbone ids
    #[arg(long, value_delimiter = ',', value_parser = parse_backbone)]
    pub backbones: Vec<BackboneId>,
    #[arg(long, default_value = "profile.csv")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 224)]
    pub input_size: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    /// Timed single-image passes; 0 skips latency
    #[arg(long, default_value_t = 20)]
    pub timed: usize,
    /// Training run whose mean fold time fills the training-time column
    #[arg(long)]
    pub run: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_backbone(s: &str) -> Result<BackboneId, String> {
    BackboneId::from_str(s).map_err(|e| e.to_string())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Label(a) => label(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::SweepClasses(a) => sweep(a),
        Command::Explain(a) => explain(a),
        Command::Profile(a) => profile(a),
        Command::Report(a) => report(a),
    }
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let d = SynthConfig::default();
    let config = SynthConfig {
        n_potatoes: a.n_potatoes.unwrap_or(d.n_potatoes),
        horizon_days: a.horizon.unwrap_or(d.horizon_days),
        sample_interval_days: a.interval.unwrap_or(d.sample_interval_days),
        image_size: a.image_size.unwrap_or(d.image_size),
        sprout_onset_day: a.sprout_onset.unwrap_or(d.sprout_onset_day),
        sprout_onset_jitter: a.sprout_jitter.unwrap_or(d.sprout_onset_jitter),
        seed: a.seed.unwrap_or(d.seed),
        ..d
    };
    let (manifest, _) = generate_synthetic_dataset(&config, &a.out)?;
    println!("{} images of {} potatoes written to {}", manifest.observations.len(), config.n_potatoes, a.out.display());
    Ok(())
}

fn check_class_count(n: usize) -> Result<(), CliError> {
    if (MIN_CLASSES..=MAX_CLASSES).contains(&n) {
        Ok(())
    } else {
        Err(CliError::usage("UnsupportedClassCount", format!("{n} classes; expected {MIN_CLASSES}..={MAX_CLASSES}")))
    }
}

fn label(a: LabelArgs) -> Result<(), CliError> {
    check_class_count(a.classes)?;
    let manifest = load_manifest(&a.manifest)?;
    let n = if a.sprout { 2 } else { a.classes };
    let labels = label_dataset(&manifest, &build_class_scheme(n)?, a.sprout)?;
    write_json(&a.out, &labels)?;
    let censored = labels.iter().filter(|l| l.remaining_days.is_none()).count();
    println!("{} samples labeled into {n} classes ({censored} from censored potatoes) -> {}", labels.len(), a.out.display());
    Ok(())
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => ExperimentConfig::default().normalized(),
    }
}

fn manifest_path(arg: Option<PathBuf>, config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    arg.or_else(|| config.manifest.clone())
        .map(|p| absolute(&p))
        .ok_or_else(|| CliError::usage("MissingArgument", "--manifest is required when the config names no manifest"))
}

/// Samples the task trains on: censored potatoes are dropped for shelf-life classes.
fn training_labels(config: &ExperimentConfig, labels: Vec<LabeledSample>) -> Vec<LabeledSample> {
    match config.task {
        Task::Sprout => labels,
        Task::ShelfLife => exclude_censored(labels),
    }
}

fn load_samples(manifest: &DatasetManifest, labels: &[LabeledSample], size: usize) -> Result<Vec<Sample>, CliError> {
    let store = ImageStore::load(&manifest.root_dir, labels, size)?;
    Ok(store.samples(labels)?)
}

fn print_fold(event: &CvEvent<'_>) {
    match event {
        CvEvent::FoldStart { fold, k, train, test } => eprintln!("fold {fold}/{k}: {train} train, {test} test"),
        CvEvent::FoldDone(o) => eprintln!(
            "fold {}: accuracy {:.4}, {} epochs, {:.1} s",
            o.fold,
            o.report.accuracy,
            o.history.epochs.len(),
            o.train_seconds
        ),
        CvEvent::Epoch { .. } => {}
    }
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut config = load_config(a.config.as_deref())?;
    let labels_path = a
        .labels
        .or_else(|| config.labels.clone())
        .map(|p| absolute(&p))
        .ok_or_else(|| CliError::usage("MissingArgument", "--labels is required when the config names no labels file"))?;
    config.manifest = Some(manifest_path(a.manifest, &config)?);
    config.labels = Some(labels_path.clone());
    let all_labels = read_labels(&labels_path)?;
    let n = all_labels.first().map(|l| l.scheme_n).ok_or_else(|| CliError::data("EmptyLabels", labels_path.display().to_string()))?;
    if all_labels.iter().any(|l| l.scheme_n != n) {
        return Err(CliError::data("MixedLabelSchemes", labels_path.display().to_string()));
    }
    if config.task == Task::Sprout && n != 2 {
        return Err(CliError::usage("InvalidConfig", format!("sprout task needs 2-class labels, {} has {n}", labels_path.display())));
    }
    config.n_classes = n;
    if a.grid && config.grid.is_none() {
        config.grid = Some(Grid::default());
    }
    let run_id = config.run_id.clone().unwrap_or_else(|| default_run_id(config.seed));
    config.run_id = Some(run_id.clone());
    let config = config.normalized()?;

    let manifest = load_manifest(config.manifest.as_ref().expect("set above"))?;
    let labels = training_labels(&config, all_labels.clone());
    let samples = load_samples(&manifest, &labels, config.train.input_size)?;

    let run = RunDir::new(a.out.unwrap_or_else(|| Path::new("runs").join(&run_id)));
    create_dir(&run.root)?;
    config.save(&run.config())?;
    write_json(&run.labels(), &all_labels)?;
    let spec = config.model_spec();

    let metrics = if a.grid {
        let grid = config.grid.clone().expect("set above");
        let mut point_runs: Vec<(PathBuf, MetricsFile)> = Vec::new();
        let mut plan = None;
        let (_, results) = grid_search(&spec, &grid, &samples, &config.train, config.k_folds, &mut |i, point, cv| {
            eprintln!("grid point {}: {} -> accuracy {:.4}", i + 1, point.label(), cv.summary.accuracy().mean);
            let dir = run.root.join("grid").join(format!("point_{}", i + 1));
            let save = || -> Result<MetricsFile, CliError> {
                for f in &cv.folds {
                    write_fold(&dir.join("folds").join(format!("fold_{}", f.fold)), f, &samples)?;
                }
                let m = MetricsFile { per_fold: cv.folds.iter().map(fold_metrics).collect(), summary: cv.summary.clone() };
                write_json(&dir.join("metrics.json"), &m)?;
                Ok(m)
            };
            let m = save().map_err(|e| tuber_nn::train::TrainError::Data(e.to_string()))?;
            plan.get_or_insert_with(|| cv.plan.clone());
            point_runs.push((dir, m));
            Ok(())
        })?;
        write_json(&run.grid_results(), &results)?;
        let best = tuber_nn::train::select_best(&results).expect("non-empty grid");
        let (best_dir, best_metrics) = &point_runs[best];
        for f in &best_metrics.per_fold {
            let from = best_dir.join("folds").join(format!("fold_{}", f.fold));
            let to = run.fold(f.fold);
            create_dir(&to)?;
            for name in ["checkpoint.bin", "history.csv", "confusion.csv", "predictions.csv"] {
                std::fs::copy(from.join(name), to.join(name)).map_err(|e| CliError::io(&from.join(name), e))?;
            }
        }
        write_assignments(&run.assignments(), plan.as_ref().expect("grid ran"))?;
        eprintln!("best grid point {}: {}", best + 1, results[best].point.label());
        best_metrics.clone()
    } else {
        let mut write_error = None;
        let cv = cross_validate(&spec, &samples, &config.train, config.k_folds, &mut |event| {
            print_fold(&event);
            if let CvEvent::FoldDone(o) = event {
                if let Err(e) = write_fold(&run.fold(o.fold), o, &samples) {
                    write_error.get_or_insert(e);
                }
            }
        })?;
        if let Some(e) = write_error {
            return Err(e);
        }
        write_assignments(&run.assignments(), &cv.plan)?;
        MetricsFile { per_fold: cv.folds.iter().map(fold_metrics).collect(), summary: cv.summary }
    };
    write_json(&run.metrics(), &metrics)?;
    render_plots(&run)?;
    let acc = metrics.summary.accuracy();
    println!("mean accuracy {:.4} ± {:.4} over {} folds -> {}", acc.mean, acc.std, metrics.per_fold.len(), run.root.display());
    Ok(())
}

fn evaluate(a: RunArgs) -> Result<(), CliError> {
    let run = RunDir::new(a.run);
    let config = ExperimentConfig::load(&run.config())?;
    let manifest = load_manifest(&manifest_path(None, &config)?)?;
    let labels = training_labels(&config, read_labels(&run.labels())?);
    let samples = load_samples(&manifest, &labels, config.train.input_size)?;
    let assignments = read_assignments(&run.assignments())?;
    let previous: Option<MetricsFile> = run.metrics().exists().then(|| read_json(&run.metrics())).transpose()?;
    let folds = run.fold_numbers();
    if folds.is_empty() {
        return Err(CliError::data("MissingArtifacts", format!("{} has no fold checkpoints", run.root.display())));
    }
    let mut per_fold = Vec::new();
    for k in folds {
        let keys: std::collections::BTreeSet<&SampleKey> = assignments.iter().filter(|(_, f)| *f == k).map(|(key, _)| key).collect();
        let test: Vec<Sample> = samples.iter().filter(|s| keys.contains(&s.key)).cloned().collect();
        let handle = load_model(&run.checkpoint(k))?;
        let (_, _, preds) = evaluate_samples(&handle, &test, config.train.label_smoothing)?;
        let truth: Vec<usize> = test.iter().map(|s| s.label).collect();
        let confusion = confusion_matrix(&truth, &preds, handle.spec.n_classes())?;
        write_text(&run.fold(k).join("confusion.csv"), &confusion.to_csv())?;
        let report = metrics_from_confusion(&confusion)?;
        let old = previous.as_ref().and_then(|m| m.per_fold.iter().find(|f| f.fold == k));
        let history = run.fold(k).join("history.csv");
        let epochs_run = if history.exists() { read_history(&history)?.len() } else { 0 };
        per_fold.push(FoldMetrics {
            fold: k,
            report,
            train_seconds: old.map_or(0.0, |f| f.train_seconds),
            best_epoch: old.map_or(0, |f| f.best_epoch),
            epochs_run: old.map_or(epochs_run, |f| f.epochs_run),
            stop_reason: old.map_or(tuber_nn::train::StopReason::MaxEpochs, |f| f.stop_reason),
        });
        eprintln!("fold {k}: accuracy {:.4} on {} samples", per_fold.last().expect("pushed").report.accuracy, test.len());
    }
    let reports: Vec<_> = per_fold.iter().map(|f| f.report.clone()).collect();
    let metrics = MetricsFile { summary: aggregate_folds(&reports)?, per_fold };
    write_json(&run.metrics(), &metrics)?;
    let plots = render_plots(&run)?;
    let acc = metrics.summary.accuracy();
    println!("mean accuracy {:.4} ± {:.4}; {} plots in {}", acc.mean, acc.std, plots.len(), run.plots().display());
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), CliError> {
    check_class_count(a.min)?;
    check_class_count(a.max)?;
    if a.min > a.max {
        return Err(CliError::usage("InvalidRange", format!("--min {} exceeds --max {}", a.min, a.max)));
    }
    let mut config = load_config(a.config.as_deref())?;
    if config.task == Task::Sprout {
        return Err(CliError::usage("InvalidConfig", "class-count sweeps need the shelf_life task"));
    }
    config.manifest = Some(manifest_path(a.manifest, &config)?);
    let run_id = config.run_id.clone().unwrap_or_else(|| default_run_id(config.seed));
    config.run_id = Some(run_id.clone());
    let manifest = load_manifest(config.manifest.as_ref().expect("set above"))?;
    let every = label_dataset(&manifest, &build_class_scheme(MIN_CLASSES)?, false)?;
    let store = ImageStore::load(&manifest.root_dir, &every, config.train.input_size)?;

    let run = RunDir::new(a.out.unwrap_or_else(|| Path::new("runs").join(&run_id)));
    create_dir(&run.root)?;
    config.save(&run.config())?;
    let rows = class_count_sweep(&manifest, &store, &config.model_spec(), &config.train, config.k_folds, a.min..=a.max, &mut |event| match event {
        SweepEvent::Start { n_classes, n_samples } => eprintln!("{n_classes} classes: {n_samples} samples"),
        SweepEvent::Cv { event, .. } => print_fold(&event),
        SweepEvent::Done(row) => eprintln!("{} classes: mean accuracy {:.4}", row.n_classes, row.summary.accuracy().mean),
    })?;
    write_json(&run.sweep_json(), &rows)?;
    let mut csv = String::from("n_classes,n_samples,accuracy_mean,accuracy_std,published_accuracy\n");
    for r in &rows {
        let a = r.summary.accuracy();
        let published = tuber_nn::train::sweep::reference_sweep_accuracy(r.n_classes).map_or(String::new(), |p| format!("{:.4}", p / 100.0));
        csv.push_str(&format!("{},{},{:.6},{:.6},{published}\n", r.n_classes, r.n_samples, a.mean, a.std));
    }
    write_text(&run.sweep_csv(), &csv)?;
    render_plots(&run)?;
    for r in &rows {
        println!("{} classes: {:.4}", r.n_classes, r.summary.accuracy().mean);
    }
    Ok(())
}

fn explain(a: ExplainArgs) -> Result<(), CliError> {
    let run = RunDir::new(a.run);
    let checkpoint = run.checkpoint(a.fold);
    if !checkpoint.exists() {
        return Err(CliError::data("MissingArtifacts", format!("no checkpoint for fold {}: {}", a.fold, checkpoint.display())));
    }
    let mut handle = load_model(&checkpoint)?;
    let mut image_path = a.image.clone();
    if !image_path.exists() && image_path.is_relative() {
        // paths as written in the manifest are relative to its directory
        let config: ExperimentConfig = read_json(&run.config())?;
        if let Some(root) = config.manifest.as_ref().and_then(|m| m.parent()) {
            image_path = root.join(&a.image);
        }
    }
    let rgb = image::open(&image_path)
        .map_err(|e| CliError::data("MissingImage", format!("{}: {e}", image_path.display())))?
        .to_rgb8();
    let mut x = resize_eval(&rgb, handle.spec.input_size);
    normalize(&mut x);
    let saliency = grad_cam(&mut handle, &x.into_dyn(), a.class, a.layer.as_deref())?;
    let localization = match &a.mask {
        Some(m) => {
            let gray = image::open(m).map_err(|e| CliError::data("MissingImage", format!("{}: {e}", m.display())))?.to_luma8();
            let mask = mask_from_gray(&gray);
            Some(localization_score(&saliency.upsample(mask.ncols(), mask.nrows()), &mask, a.top_fraction)?)
        }
        None => None,
    };
    create_dir(&run.heatmaps())?;
    let stem = a.image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let png = run.heatmaps().join(format!("{stem}_class{}.png", a.class));
    overlay(&saliency, &rgb, 0.5).save(&png).map_err(|e| CliError::runtime("IoError", format!("{}: {e}", png.display())))?;
    let sidecar = HeatmapSidecar {
        layer_id: saliency.layer_id.clone(),
        target_class: a.class,
        degenerate: saliency.degenerate,
        localization_score: localization,
    };
    write_json(&png.with_extension("json"), &sidecar)?;
    match localization {
        Some(s) => println!("{} (layer {}, localization {s:.3})", png.display(), saliency.layer_id),
        None => println!("{} (layer {})", png.display(), saliency.layer_id),
    }
    Ok(())
}

fn profile(a: ProfileArgs) -> Result<(), CliError> {
    if a.backbones.is_empty() {
        return Err(CliError::usage("MissingArgument", "--backbones needs at least one backbone id"));
    }
    let mut train_minutes = Vec::new();
    if let Some(dir) = &a.run {
        let run = RunDir::new(dir);
        let config = ExperimentConfig::load(&run.config())?;
        let metrics: MetricsFile = read_json(&run.metrics())?;
        let secs: f64 = metrics.per_fold.iter().map(|f| f.train_seconds).sum::<f64>() / metrics.per_fold.len().max(1) as f64;
        train_minutes.push((config.backbone, secs / 60.0));
    }
    let config = ProfileConfig { input_size: a.input_size, n_warmup: a.warmup, n_timed: a.timed, train_minutes };
    let rows = build_profile_table(&a.backbones, &config)?;
    write_text(&a.out, &profile_to_csv(&rows))?;
    print!("{}", profile_to_markdown(&rows));
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), CliError> {
    let run = RunDir::new(a.run);
    if run.metrics().exists() || run.sweep_json().exists() {
        render_plots(&run)?;
    }
    let text = build_report(&run)?;
    let out = a.out.unwrap_or_else(|| run.report());
    write_text(&out, &text)?;
    println!("{}", out.display());
    Ok(())
}
