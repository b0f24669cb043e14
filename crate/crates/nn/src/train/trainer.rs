use ndarray::Ix2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tuber_core::seed::{mix_seed, str_hash};

use super::augment::AugmentationConfig;
use super::data::{eval_batch, train_batch, Sample};
use super::loss::{argmax, batch_loss};
use super::schedule::{early_stop_update, plateau_step, EarlyStopState, PlateauState};
use super::TrainError;
use crate::layers::Mode;
use crate::optim::Adam;
use crate::zoo::{build_classifier, ModelHandle, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub input_size: usize,
    /// Backbone default (1e-3 for CNNs, 1e-4 for ViT-B/16) when unset.
    pub learning_rate: Option<f32>,
    pub beta1: f32,
    pub beta2: f32,
    pub label_smoothing: f64,
    pub lrs_factor: f64,
    pub lrs_patience: usize,
    pub es_patience: usize,
    pub seed: u64,
    pub augmentation: AugmentationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            batch_size: 16,
            input_size: crate::zoo::INPUT_SIZE,
            learning_rate: None,
            beta1: 0.9,
            beta2: 0.999,
            label_smoothing: 0.1,
            lrs_factor: 0.5,
            lrs_patience: 30,
            es_patience: 100,
            seed: 0,
            augmentation: AugmentationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing must be in [0, 1)");
        }
        if !(self.lrs_factor > 0.0 && self.lrs_factor < 1.0) {
            return bad("lrs_factor must be in (0, 1)");
        }
        if self.lrs_patience == 0 || self.es_patience == 0 {
            return bad("patience values must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if matches!(self.learning_rate, Some(lr) if lr <= 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    pub fn learning_rate_for(&self, spec: &ModelSpec) -> f32 {
        self.learning_rate.unwrap_or_else(|| spec.backbone.default_learning_rate())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_acc,val_loss,val_acc,lr";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{},{},{}\n", e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc, e.lr));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Vec<EpochRecord>, TrainError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(Self::CSV_HEADER) {
            return Err(TrainError::Data("history.csv has an unexpected header".into()));
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let num = |i: usize| -> Result<f64, TrainError> {
                    f.get(i)
                        .and_then(|v| v.trim().parse().ok())
                        .ok_or_else(|| TrainError::Data(format!("bad history row: {l}")))
                };
                Ok(EpochRecord {
                    epoch: num(0)? as usize,
                    train_loss: num(1)?,
                    train_acc: num(2)?,
                    val_loss: num(3)?,
                    val_acc: num(4)?,
                    lr: num(5)?,
                })
            })
            .collect()
    }
}

/// Loss, accuracy and 1-based predictions of `handle` on `samples`, in evaluation mode.
pub fn evaluate_samples(handle: &ModelHandle, samples: &[Sample], eps: f64) -> Result<(f64, f64, Vec<usize>), TrainError> {
    if samples.is_empty() {
        return Ok((f64::NAN, f64::NAN, Vec::new()));
    }
    let mut total = 0.0;
    let mut hits = 0;
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(32) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, y) = eval_batch(&refs);
        let logits = handle.net.infer(x).into_dimensionality::<Ix2>().expect("(N, classes) logits");
        let (loss, _, h) = batch_loss(&logits, &y, eps)?;
        total += loss * chunk.len() as f64;
        hits += h;
        for row in logits.rows() {
            let z: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            preds.push(argmax(&z) + 1);
        }
    }
    let n = samples.len() as f64;
    Ok((total / n, hits as f64 / n, preds))
}

/// Splits a shuffled order into batches, folding a trailing single sample into the
/// previous batch (batch statistics need at least two samples).
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let start = (out.len() - 1) * size;
        out.pop();
        out.push(&order[start..]);
    }
    out
}

/// Trains a freshly built model. Validation loss drives the scheduler and early stopping
/// (training loss when `val` is empty); the returned handle carries the best epoch's weights.
pub fn train_model(
    spec: &ModelSpec,
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelHandle, History), TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::Data("empty training set".into()));
    }
    let n = spec.n_classes();
    if let Some(s) = train.iter().chain(val).find(|s| s.label == 0 || s.label > n) {
        return Err(TrainError::InvalidClassIndex { index: s.label, n_classes: n });
    }
    let mut handle = build_classifier(spec, config.seed)?;
    let mut adam = Adam::with_betas(config.learning_rate_for(spec), config.beta1, config.beta2);
    let mut plateau = PlateauState::new(adam.lr as f64);
    let mut stopper = EarlyStopState::default();
    let mut best_state = handle.state();
    let mut records = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let eps = config.label_smoothing;

    for epoch in 1..=config.max_epochs {
        let lr = plateau.lr;
        adam.lr = lr as f32;
        let mut order: Vec<usize> = (0..train.len()).collect();
        // sort by key first so the shuffle does not depend on input row order
        order.sort_by(|&a, &b| train[a].key.cmp(&train[b].key));
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, str_hash("shuffle"), epoch as u64])));

        let (mut loss_sum, mut hits) = (0.0, 0);
        for batch in batches(&order, config.batch_size) {
            let refs: Vec<&Sample> = batch.iter().map(|&i| &train[i]).collect();
            let (x, y) = train_batch(&refs, &config.augmentation, config.seed, epoch, config.input_size);
            handle.zero_grad();
            let logits = handle.forward_train(x, Mode::Train).into_dimensionality::<Ix2>().expect("(N, classes) logits");
            let (loss, grad, h) = batch_loss(&logits, &y, eps)?;
            handle.backward(grad.into_dyn());
            adam.step(&mut handle.trainable_params_mut());
            loss_sum += loss * batch.len() as f64;
            hits += h;
        }
        let train_loss = loss_sum / train.len() as f64;
        let train_acc = hits as f64 / train.len() as f64;
        let (val_loss, val_acc, _) = evaluate_samples(&handle, val, eps)?;
        let metric = if val.is_empty() { train_loss } else { val_loss };

        let record = EpochRecord { epoch, train_loss, train_acc, val_loss, val_acc, lr };
        on_epoch(&record);
        records.push(record);

        plateau = plateau_step(plateau, metric, config.lrs_factor, config.lrs_patience);
        let (stop, next) = early_stop_update(stopper, epoch, metric, config.es_patience);
        if next.best_epoch == epoch {
            best_state = handle.state();
        }
        stopper = next;
        if stop {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    handle.restore(&best_state);
    Ok((handle, History { epochs: records, best_epoch: stopper.best_epoch, stop_reason }))
}
