use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tuber_core::labeling::{MAX_CLASSES, MIN_CLASSES};
use tuber_core::seed::{mix_seed, str_hash};
use tuber_nn::train::{Grid, TrainConfig};
use tuber_nn::{BackboneId, FreezePolicy, HeadConfig, ModelSpec};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Sprout,
    ShelfLife,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadSettings {
    pub hidden_widths: Vec<usize>,
    pub dropout_rate: f32,
    pub use_batch_norm: bool,
}

impl Default for HeadSettings {
    fn default() -> Self {
        let h = HeadConfig::default();
        Self { hidden_widths: h.hidden_widths, dropout_rate: h.dropout_rate, use_batch_norm: h.use_batch_norm }
    }
}

/// Everything a run needs besides the images themselves; written verbatim as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: Task,
    pub n_classes: usize,
    pub backbone: BackboneId,
    /// Backbone default when unset: ImageNet weights for the large backbones.
    pub pretrained: Option<bool>,
    pub freeze: Option<FreezePolicy>,
    pub head: HeadSettings,
    pub train: TrainConfig,
    pub k_folds: usize,
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub grid: Option<Grid>,
    pub run_id: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::ShelfLife,
            n_classes: 2,
            backbone: BackboneId::TinyCnn,
            pretrained: None,
            freeze: None,
            head: HeadSettings::default(),
            train: TrainConfig::default(),
            k_folds: 5,
            seed: 0,
            manifest: None,
            labels: None,
            grid: None,
            run_id: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data("ConfigUnreadable", format!("{}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::usage("InvalidConfig", format!("{}: {e}", path.display())))?;
        config.normalized()
    }

    /// Applies the task rules and checks ranges.
    pub fn normalized(mut self) -> Result<Self, CliError> {
        if self.task == Task::Sprout {
            self.n_classes = 2;
        }
        if !(MIN_CLASSES..=MAX_CLASSES).contains(&self.n_classes) {
            return Err(CliError::usage(
                "UnsupportedClassCount",
                format!("{} classes; expected {MIN_CLASSES}..={MAX_CLASSES}", self.n_classes),
            ));
        }
        if self.k_folds < 2 {
            return Err(CliError::usage("InvalidConfig", "k_folds must be at least 2"));
        }
        self.train.seed = self.seed;
        self.train.validate().map_err(|e| CliError::usage("InvalidConfig", e.to_string()))?;
        self.model_spec().validate().map_err(|e| CliError::usage("InvalidConfig", e.to_string()))?;
        Ok(self)
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            hidden_widths: self.head.hidden_widths.clone(),
            dropout_rate: self.head.dropout_rate,
            use_batch_norm: self.head.use_batch_norm,
            n_classes: self.n_classes,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let mut spec = ModelSpec::new(self.backbone, self.head_config());
        if let Some(p) = self.pretrained {
            spec.pretrained = p;
        }
        if let Some(f) = self.freeze {
            spec.freeze = f;
        }
        spec.input_size = self.train.input_size;
        spec
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}

/// `YYYYMMDDTHHMMSSZ-xxxxxx`: UTC start time and a short hash of the seed.
pub fn default_run_id(seed: u64) -> String {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    format!("{stamp}-{:06x}", mix_seed(&[seed, str_hash("run")]) & 0xff_ffff)
}
