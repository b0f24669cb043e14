use serde::{Deserialize, Serialize};
use tuber_core::metrics::{aggregate_folds, confusion_matrix, metrics_from_confusion, ConfusionMatrix, CvSummary, MetricsReport};

use super::data::Sample;
use super::folds::{stratified_kfold, FoldPlan};
use super::trainer::{evaluate_samples, train_model, EpochRecord, History, TrainConfig};
use super::TrainError;
use crate::zoo::{HeadConfig, ModelHandle, ModelSpec};

pub struct FoldOutcome {
    /// 1-based fold number.
    pub fold: usize,
    pub handle: ModelHandle,
    pub history: History,
    pub confusion: ConfusionMatrix,
    pub report: MetricsReport,
    /// `(sample index, 1-based prediction)` for the held-out fold.
    pub predictions: Vec<(usize, usize)>,
    pub train_seconds: f64,
}

pub struct CvRun {
    pub plan: FoldPlan,
    pub folds: Vec<FoldOutcome>,
    pub summary: CvSummary,
}

/// Progress events emitted while cross-validating.
pub enum CvEvent<'a> {
    FoldStart { fold: usize, k: usize, train: usize, test: usize },
    Epoch { fold: usize, record: &'a EpochRecord },
    FoldDone(&'a FoldOutcome),
}

pub fn fold_plan_for(samples: &[Sample], k: usize, seed: u64) -> Result<FoldPlan, TrainError> {
    let keys: Vec<_> = samples.iter().map(|s| s.key.clone()).collect();
    let labels: Vec<_> = samples.iter().map(|s| s.label).collect();
    stratified_kfold(&keys, &labels, k, seed)
}

/// Trains one fresh model per fold; each fold's held-out part serves as its validation
/// set and its test set.
pub fn cross_validate(
    spec: &ModelSpec,
    samples: &[Sample],
    config: &TrainConfig,
    k: usize,
    on_event: &mut dyn FnMut(CvEvent<'_>),
) -> Result<CvRun, TrainError> {
    let plan = fold_plan_for(samples, k, config.seed)?;
    let mut folds = Vec::with_capacity(k);
    for fold in 1..=k {
        let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
            (0..samples.len()).partition(|&i| plan.fold_of(&samples[i].key) == Some(fold));
        let train: Vec<Sample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
        let test: Vec<Sample> = test_idx.iter().map(|&i| samples[i].clone()).collect();
        on_event(CvEvent::FoldStart { fold, k, train: train.len(), test: test.len() });
        let start = std::time::Instant::now();
        let (handle, history) = train_model(spec, &train, &test, config, &mut |record| on_event(CvEvent::Epoch { fold, record }))?;
        let train_seconds = start.elapsed().as_secs_f64();
        let (_, _, preds) = evaluate_samples(&handle, &test, config.label_smoothing)?;
        let truth: Vec<usize> = test.iter().map(|s| s.label).collect();
        let confusion = confusion_matrix(&truth, &preds, spec.n_classes())?;
        let report = metrics_from_confusion(&confusion)?;
        let outcome = FoldOutcome {
            fold,
            handle,
            history,
            confusion,
            report,
            predictions: test_idx.into_iter().zip(preds).collect(),
            train_seconds,
        };
        on_event(CvEvent::FoldDone(&outcome));
        folds.push(outcome);
    }
    let reports: Vec<MetricsReport> = folds.iter().map(|f| f.report.clone()).collect();
    let summary = aggregate_folds(&reports)?;
    Ok(CvRun { plan, folds, summary })
}

/// Candidate values per hyperparameter; unset axes keep the template's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub hidden_widths: Option<Vec<Vec<usize>>>,
    pub learning_rate: Option<Vec<f32>>,
    pub batch_size: Option<Vec<usize>>,
    pub dropout_rate: Option<Vec<f32>>,
    pub label_smoothing: Option<Vec<f64>>,
    /// Largest allowed number of grid points.
    pub cap: usize,
}

impl Default for Grid {
    /// The four top-layer variants crossed with two learning rates.
    fn default() -> Self {
        Self {
            hidden_widths: Some(vec![vec![], vec![1024], vec![1024, 1024], vec![1024, 1024, 1024]]),
            learning_rate: Some(vec![1e-3, 1e-4]),
            batch_size: None,
            dropout_rate: None,
            label_smoothing: None,
            cap: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub head: HeadConfig,
    pub config: TrainConfig,
}

impl GridPoint {
    pub fn label(&self) -> String {
        let lr = self.config.learning_rate.map_or("default".to_string(), |lr| format!("{lr:e}"));
        format!("{} lr={lr} bs={} drop={} eps={}", self.head.label(), self.config.batch_size, self.head.dropout_rate, self.config.label_smoothing)
    }
}

fn axis<T: Clone>(values: &Option<Vec<T>>, current: T) -> Vec<T> {
    values.clone().unwrap_or_else(|| vec![current])
}

impl Grid {
    fn empty_axis(&self) -> bool {
        self.hidden_widths.as_ref().is_some_and(Vec::is_empty)
            || self.learning_rate.as_ref().is_some_and(Vec::is_empty)
            || self.batch_size.as_ref().is_some_and(Vec::is_empty)
            || self.dropout_rate.as_ref().is_some_and(Vec::is_empty)
            || self.label_smoothing.as_ref().is_some_and(Vec::is_empty)
    }

    /// Cartesian product in axis order widths, learning rate, batch size, dropout, smoothing.
    pub fn points(&self, head: &HeadConfig, config: &TrainConfig) -> Result<Vec<GridPoint>, TrainError> {
        if self.empty_axis() {
            return Err(TrainError::EmptyGrid);
        }
        let widths = axis(&self.hidden_widths, head.hidden_widths.clone());
        let lrs = axis(&self.learning_rate.as_ref().map(|v| v.iter().map(|&x| Some(x)).collect()), config.learning_rate);
        let batch = axis(&self.batch_size, config.batch_size);
        let drop = axis(&self.dropout_rate, head.dropout_rate);
        let smooth = axis(&self.label_smoothing, config.label_smoothing);
        let size = widths.len() * lrs.len() * batch.len() * drop.len() * smooth.len();
        if size > self.cap {
            return Err(TrainError::GridTooLarge { size, cap: self.cap });
        }
        let mut out = Vec::with_capacity(size);
        for w in &widths {
            for &lr in &lrs {
                for &b in &batch {
                    for &d in &drop {
                        for &e in &smooth {
                            let head = HeadConfig { hidden_widths: w.clone(), dropout_rate: d, ..head.clone() };
                            let config = TrainConfig { learning_rate: lr, batch_size: b, label_smoothing: e, ..config.clone() };
                            out.push(GridPoint { head, config });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub point: GridPoint,
    pub summary: CvSummary,
}

/// Highest mean accuracy; ties go to the lower standard deviation, then the earlier point.
pub fn select_best(results: &[GridResult]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in results.iter().enumerate() {
        let a = r.summary.accuracy();
        best = match best {
            None => Some(i),
            Some(b) => {
                let cur = results[b].summary.accuracy();
                if a.mean > cur.mean || (a.mean == cur.mean && a.std < cur.std) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Cross-validates every grid point. `on_point` sees each finished run before its models
/// are dropped.
pub fn grid_search(
    spec: &ModelSpec,
    grid: &Grid,
    samples: &[Sample],
    config: &TrainConfig,
    k: usize,
    on_point: &mut dyn FnMut(usize, &GridPoint, &CvRun) -> Result<(), TrainError>,
) -> Result<(GridPoint, Vec<GridResult>), TrainError> {
    let points = grid.points(&spec.head, config)?;
    let mut results = Vec::with_capacity(points.len());
    for (i, point) in points.into_iter().enumerate() {
        let spec = ModelSpec { head: point.head.clone(), ..spec.clone() };
        let run = cross_validate(&spec, samples, &point.config, k, &mut |_| {})?;
        on_point(i, &point, &run)?;
        results.push(GridResult { point, summary: run.summary });
    }
    let best = select_best(&results).expect("grid has at least one point");
    Ok((results[best].point.clone(), results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use tuber_core::metrics::MeanStd;

    fn result(mean: f64, std: f64) -> GridResult {
        let mut metrics = BTreeMap::new();
        metrics.insert("accuracy".to_string(), MeanStd { mean, std });
        GridResult {
            point: GridPoint { head: HeadConfig::default(), config: TrainConfig::default() },
            summary: CvSummary { folds: 5, metrics, single_fold: false },
        }
    }

    #[test]
    fn default_grid_has_eight_points() {
        let pts = Grid::default().points(&HeadConfig::default(), &TrainConfig::default()).unwrap();
        assert_eq!(pts.len(), 8);
        assert_eq!(pts[0].head.label(), "NoTop-2");
        assert_eq!(pts[1].config.learning_rate, Some(1e-4));
    }

    #[test]
    fn single_point_grid() {
        let g = Grid { hidden_widths: None, learning_rate: None, ..Grid::default() };
        let pts = g.points(&HeadConfig::default(), &TrainConfig::default()).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(select_best(&[result(0.5, 0.1)]), Some(0));
    }

    #[test]
    fn tie_break_prefers_lower_std_then_order() {
        assert_eq!(select_best(&[result(0.9, 0.02), result(0.9, 0.01)]), Some(1));
        assert_eq!(select_best(&[result(0.9, 0.01), result(0.9, 0.01)]), Some(0));
        assert_eq!(select_best(&[result(0.8, 0.0), result(0.9, 0.05)]), Some(1));
    }

    #[test]
    fn cap_and_empty_axes() {
        let g = Grid { cap: 7, ..Grid::default() };
        assert!(matches!(g.points(&HeadConfig::default(), &TrainConfig::default()), Err(TrainError::GridTooLarge { size: 8, cap: 7 })));
        let g = Grid { learning_rate: Some(vec![]), ..Grid::default() };
        assert!(matches!(g.points(&HeadConfig::default(), &TrainConfig::default()), Err(TrainError::EmptyGrid)));
    }
}
