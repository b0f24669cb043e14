//! Training protocol: smoothed cross-entropy, Adam, plateau schedule, early stopping,
//! stratified k-fold cross-validation and grid search.

pub mod augment;
pub mod cv;
pub mod data;
pub mod folds;
pub mod loss;
pub mod schedule;
pub mod sweep;
pub mod trainer;

use thiserror::Error;
use tuber_core::metrics::MetricsError;

use crate::zoo::ZooError;

pub use augment::{augment, resize_eval, AugmentationConfig};
pub use cv::{cross_validate, grid_search, select_best, CvEvent, CvRun, FoldOutcome, Grid, GridPoint, GridResult};
pub use data::{ImageStore, Sample};
pub use folds::{stratified_kfold, FoldPlan};
pub use loss::{smoothed_cross_entropy, smoothed_cross_entropy_grad};
pub use schedule::{early_stop_update, plateau_step, EarlyStopState, PlateauState};
pub use sweep::{class_count_sweep, SweepEvent, SweepRow};
pub use trainer::{evaluate_samples, train_model, EpochRecord, History, StopReason, TrainConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("InvalidClassIndex: class {index} outside 0..{n_classes}")]
    InvalidClassIndex { index: usize, n_classes: usize },
    #[error("ClassTooSmall: class {class} has {count} samples, need {required}")]
    ClassTooSmall { class: usize, count: usize, required: usize },
    #[error("GridTooLarge: {size} points exceed the cap of {cap}")]
    GridTooLarge { size: usize, cap: usize },
    #[error("EmptyGrid: a grid axis has no candidates")]
    EmptyGrid,
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("DataError: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ZooError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
