//! Cross-validated accuracy as a function of the number of weight-loss classes.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use tuber_core::dataset::DatasetManifest;
use tuber_core::labeling::{build_class_scheme, exclude_censored, label_dataset};
use tuber_core::metrics::CvSummary;

use super::cv::{cross_validate, CvEvent};
use super::data::ImageStore;
use super::trainer::TrainConfig;
use super::TrainError;
use crate::zoo::ModelSpec;

/// Published accuracies (%) for n = 2..=7 classes.
pub const REFERENCE_SWEEP_ACCURACY: [(usize, f64); 6] =
    [(2, 99.34), (3, 95.76), (4, 97.38), (5, 89.18), (6, 86.60), (7, 82.68)];

/// Alternative published 2-class accuracy (%) from the class-count figure.
pub const REFERENCE_SWEEP_ACCURACY_N2_FIGURE: f64 = 99.01;

pub fn reference_sweep_accuracy(n_classes: usize) -> Option<f64> {
    REFERENCE_SWEEP_ACCURACY.iter().find(|(n, _)| *n == n_classes).map(|(_, a)| *a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_classes: usize,
    pub n_samples: usize,
    pub summary: CvSummary,
}

/// Progress events of a sweep: which class count is running, then its CV events.
pub enum SweepEvent<'a> {
    Start { n_classes: usize, n_samples: usize },
    Cv { n_classes: usize, event: CvEvent<'a> },
    Done(&'a SweepRow),
}

/// One full cross-validation per class count with the same backbone and training setup.
/// Censored potatoes are left out; images come from `store`, which must hold every
/// labeled observation.
pub fn class_count_sweep(
    manifest: &DatasetManifest,
    store: &ImageStore,
    spec: &ModelSpec,
    config: &TrainConfig,
    k: usize,
    n_range: RangeInclusive<usize>,
    on_event: &mut dyn FnMut(SweepEvent<'_>),
) -> Result<Vec<SweepRow>, TrainError> {
    let mut rows = Vec::new();
    for n in n_range {
        let scheme = build_class_scheme(n).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        let labels = label_dataset(manifest, &scheme, false).map_err(|e| TrainError::Data(e.to_string()))?;
        let samples = store.samples(&exclude_censored(labels))?;
        on_event(SweepEvent::Start { n_classes: n, n_samples: samples.len() });
        let mut spec = spec.clone();
        spec.head.n_classes = n;
        let run = cross_validate(&spec, &samples, config, k, &mut |event| on_event(SweepEvent::Cv { n_classes: n, event }))?;
        let row = SweepRow { n_classes: n, n_samples: samples.len(), summary: run.summary };
        on_event(SweepEvent::Done(&row));
        rows.push(row);
    }
    Ok(rows)
}
