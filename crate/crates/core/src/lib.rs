//! Data side of the potato quality pipeline.
//!
//! * [`dataset`] reads and validates the per-potato image/weight manifest and splits it.
//! * [`labeling`] turns weight trajectories into cumulative weight loss, shelf life and
//!   class indices.
//! * [`synth`] generates a synthetic dataset with exact ground truth.
//! * [`metrics`] holds confusion matrices and the derived classification metrics.

pub mod dataset;
pub mod labeling;
pub mod metrics;
pub mod seed;
pub mod synth;

pub use dataset::{
    build_trajectories, crop_tray_grid, holdout_split, load_manifest, write_manifest,
    DatasetError, DatasetManifest, DatasetSplit, PotatoObservation, SampleKey, WeightTrajectory,
};
pub use labeling::{
    assign_class, build_class_scheme, cumulative_weight_loss, estimate_shelf_life, label_dataset,
    remaining_shelf_life, ClassScheme, LabelError, LabeledSample, ShelfLifeEstimate,
};
pub use metrics::{
    aggregate_folds, binary_diagnostics, confusion_matrix, metrics_from_confusion,
    BinaryDiagnostics, CvSummary, ConfusionMatrix, MetricsError, MetricsReport,
};
