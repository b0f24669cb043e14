use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use ndarray::Array3;
use tuber_core::{LabeledSample, SampleKey};

use super::augment::{augment, normalize, resize_eval, stack, AugmentationConfig};
use super::TrainError;
use crate::param::Tensor;
use tuber_core::seed::mix_seed;

/// A decoded image with its normalized evaluation view.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub raw: Arc<RgbImage>,
    pub eval: Arc<Array3<f32>>,
}

impl LoadedImage {
    pub fn new(raw: RgbImage, size: usize) -> Self {
        let mut eval = resize_eval(&raw, size);
        normalize(&mut eval);
        Self { raw: Arc::new(raw), eval: Arc::new(eval) }
    }
}

/// One training or evaluation example. `label` is 1-based.
#[derive(Debug, Clone)]
pub struct Sample {
    pub key: SampleKey,
    pub label: usize,
    pub image: LoadedImage,
}

/// Decoded images keyed by sample, shared between label schemes.
#[derive(Debug, Default, Clone)]
pub struct ImageStore {
    pub size: usize,
    images: HashMap<SampleKey, LoadedImage>,
}

impl ImageStore {
    pub fn new(size: usize) -> Self {
        Self { size, images: HashMap::new() }
    }

    pub fn insert(&mut self, key: SampleKey, image: RgbImage) {
        self.images.insert(key, LoadedImage::new(image, self.size));
    }

    pub fn get(&self, key: &SampleKey) -> Option<&LoadedImage> {
        self.images.get(key)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Decodes the image of every labeled sample, resolving paths against `root`.
    pub fn load(root: &Path, labels: &[LabeledSample], size: usize) -> Result<Self, TrainError> {
        let mut store = Self::new(size);
        for s in labels {
            let key = SampleKey::new(&s.potato_id, s.day);
            if store.images.contains_key(&key) {
                continue;
            }
            let path = root.join(&s.image_ref);
            let img = image::open(&path)
                .map_err(|e| TrainError::Data(format!("{}: {e}", path.display())))?
                .to_rgb8();
            store.insert(key, img);
        }
        Ok(store)
    }

    pub fn samples(&self, labels: &[LabeledSample]) -> Result<Vec<Sample>, TrainError> {
        labels
            .iter()
            .map(|s| {
                let key = SampleKey::new(&s.potato_id, s.day);
                let image = self.get(&key).cloned().ok_or_else(|| TrainError::Data(format!("no image loaded for {key}")))?;
                Ok(Sample { key, label: s.class_index, image })
            })
            .collect()
    }
}

/// Normalized evaluation batch and 0-based labels.
pub fn eval_batch(samples: &[&Sample]) -> (Tensor, Vec<usize>) {
    let imgs: Vec<&Array3<f32>> = samples.iter().map(|s| s.image.eval.as_ref()).collect();
    (stack(&imgs), samples.iter().map(|s| s.label - 1).collect())
}

/// Augmented training batch; randomness is keyed by `(seed, epoch, sample key)`.
pub fn train_batch(samples: &[&Sample], config: &AugmentationConfig, seed: u64, epoch: usize, size: usize) -> (Tensor, Vec<usize>) {
    let imgs: Vec<Array3<f32>> = samples
        .iter()
        .map(|s| {
            let mut a = augment(&s.image.raw, config, mix_seed(&[seed, epoch as u64, s.key.stable_hash(0)]), size);
            normalize(&mut a);
            a
        })
        .collect();
    let refs: Vec<&Array3<f32>> = imgs.iter().collect();
    (stack(&refs), samples.iter().map(|s| s.label - 1).collect())
}
