//! Backbone construction, classifier heads and model handles.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::{Array2, Axis, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tuber_core::seed::{mix_seed, str_hash};

use crate::layers::{
    AvgPool2d, BatchNorm, ClassToken, Conv2d, Cost, Dense, DenseBlock, Dropout, Gelu, GlobalAvgPool, Layer,
    LayerNorm, MaxPool2d, Mode, MultiHeadAttention, Relu, Residual, Sequential, TakeClassToken, ToTokens,
};
use crate::param::{Param, Tensor};

pub const INPUT_SIZE: usize = 224;
pub const CACHE_ENV: &str = "TUBER_CACHE";

#[derive(Debug, Error)]
pub enum ZooError {
    #[error("WeightsUnavailable: no cached weights for {backbone} at {path}")]
    WeightsUnavailable { backbone: BackboneId, path: PathBuf },
    #[error("InvalidHead: {0}")]
    InvalidHead(String),
    #[error("ShapeMismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("CorruptCheckpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("UnknownBackbone: {0}")]
    UnknownBackbone(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BackboneId {
    #[serde(rename = "VGG16")]
    Vgg16,
    #[serde(rename = "RESNET50")]
    Resnet50,
    #[serde(rename = "DENSENET121")]
    Densenet121,
    #[serde(rename = "VIT_B16")]
    VitB16,
    #[serde(rename = "TINY_CNN")]
    TinyCnn,
    #[serde(rename = "TINY_VIT")]
    TinyVit,
}

impl BackboneId {
    pub const ALL: [BackboneId; 6] = [
        BackboneId::Vgg16,
        BackboneId::Resnet50,
        BackboneId::Densenet121,
        BackboneId::VitB16,
        BackboneId::TinyCnn,
        BackboneId::TinyVit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BackboneId::Vgg16 => "VGG16",
            BackboneId::Resnet50 => "RESNET50",
            BackboneId::Densenet121 => "DENSENET121",
            BackboneId::VitB16 => "VIT_B16",
            BackboneId::TinyCnn => "TINY_CNN",
            BackboneId::TinyVit => "TINY_VIT",
        }
    }

    pub fn is_tiny(self) -> bool {
        matches!(self, BackboneId::TinyCnn | BackboneId::TinyVit)
    }

    pub fn is_transformer(self) -> bool {
        matches!(self, BackboneId::VitB16 | BackboneId::TinyVit)
    }

    /// Layer used for Grad-CAM when none is named.
    pub fn default_cam_layer(self) -> &'static str {
        match self {
            BackboneId::Vgg16 => "block5",
            BackboneId::Resnet50 => "layer4",
            BackboneId::Densenet121 => "norm5",
            BackboneId::VitB16 | BackboneId::TinyVit => "encoder",
            BackboneId::TinyCnn => "block1",
        }
    }

    /// Learning rate used when a config does not set one.
    pub fn default_learning_rate(self) -> f32 {
        if self == BackboneId::VitB16 {
            1e-4
        } else {
            1e-3
        }
    }
}

impl fmt::Display for BackboneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackboneId {
    type Err = ZooError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', '/'], "_");
        let id = match norm.as_str() {
            "VGG16" | "VGG_16" => BackboneId::Vgg16,
            "RESNET50" | "RESNET_50" => BackboneId::Resnet50,
            "DENSENET121" | "DENSENET_121" => BackboneId::Densenet121,
            "VIT_B16" | "VIT_B_16" => BackboneId::VitB16,
            "TINY_CNN" => BackboneId::TinyCnn,
            "TINY_VIT" => BackboneId::TinyVit,
            _ => return Err(ZooError::UnknownBackbone(s.to_string())),
        };
        Ok(id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub hidden_widths: Vec<usize>,
    pub dropout_rate: f32,
    pub use_batch_norm: bool,
    pub n_classes: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self::with_widths(&[1024, 1024], 2)
    }
}

impl HeadConfig {
    pub fn with_widths(widths: &[usize], n_classes: usize) -> Self {
        Self { hidden_widths: widths.to_vec(), dropout_rate: 0.5, use_batch_norm: true, n_classes }
    }

    /// The four top-layer variants: none, one, two and three 1024-wide layers.
    pub fn ablation_variants(n_classes: usize) -> Vec<HeadConfig> {
        (0..4).map(|depth| Self::with_widths(&vec![1024; depth], n_classes)).collect()
    }

    /// `NoTop-4`, `1024-1024-4` style label.
    pub fn label(&self) -> String {
        if self.hidden_widths.is_empty() {
            format!("NoTop-{}", self.n_classes)
        } else {
            let widths: Vec<String> = self.hidden_widths.iter().map(|w| w.to_string()).collect();
            format!("{}-{}", widths.join("-"), self.n_classes)
        }
    }

    pub fn validate(&self) -> Result<(), ZooError> {
        if self.n_classes < 2 {
            return Err(ZooError::InvalidHead(format!("n_classes must be at least 2, got {}", self.n_classes)));
        }
        if self.hidden_widths.contains(&0) {
            return Err(ZooError::InvalidHead("hidden widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ZooError::InvalidHead(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

/// Which parameters receive gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    /// Backbone runs in inference mode and only the head is trained.
    FrozenBackbone,
    Full,
}

impl FreezePolicy {
    /// Frozen for the pretrained families, full for the randomly initialized tiny ones.
    pub fn default_for(backbone: BackboneId) -> Self {
        if backbone.is_tiny() {
            FreezePolicy::Full
        } else {
            FreezePolicy::FrozenBackbone
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub backbone: BackboneId,
    pub pretrained: bool,
    pub head: HeadConfig,
    pub freeze: FreezePolicy,
    pub input_size: usize,
}

impl ModelSpec {
    /// Pretrained weights for the four large families, random for the tiny ones.
    pub fn new(backbone: BackboneId, head: HeadConfig) -> Self {
        Self {
            backbone,
            pretrained: !backbone.is_tiny(),
            head,
            freeze: FreezePolicy::default_for(backbone),
            input_size: INPUT_SIZE,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.head.n_classes
    }

    pub fn validate(&self) -> Result<(), ZooError> {
        self.head.validate()?;
        if self.backbone.is_tiny() && self.pretrained {
            return Err(ZooError::InvalidHead(format!("{} has no pretrained weights", self.backbone)));
        }
        if self.input_size % 32 != 0 {
            return Err(ZooError::ShapeMismatch { expected: vec![INPUT_SIZE], got: vec![self.input_size] });
        }
        Ok(())
    }
}

/// One named top-level block of a network.
pub struct Stage {
    pub name: String,
    pub layer: Box<dyn Layer>,
}

/// Backbone stages followed by the classifier head.
pub struct Network {
    pub stages: Vec<Stage>,
    /// Index of the first head stage.
    pub head_start: usize,
}

impl Network {
    pub fn stage_names(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn stage_index(&self, name: &str) -> Option<usize> {
        self.stages.iter().position(|s| s.name == name)
    }

    /// Pure evaluation pass, returns logits.
    pub fn infer(&self, x: Tensor) -> Tensor {
        self.stages.iter().fold(x, |x, s| s.layer.infer(x))
    }

    /// Output of stages `[0, end)` in evaluation mode.
    pub fn infer_until(&self, x: Tensor, end: usize) -> Tensor {
        self.stages[..end].iter().fold(x, |x, s| s.layer.infer(x))
    }

    /// Recording pass over stages `[start, len)`.
    pub fn forward_from(&mut self, x: Tensor, start: usize, mode: Mode) -> Tensor {
        self.stages[start..].iter_mut().fold(x, |x, s| s.layer.forward(x, mode))
    }

    /// Backward over stages `[start, len)`; returns the gradient at stage `start`'s input.
    pub fn backward_to(&mut self, grad: Tensor, start: usize) -> Tensor {
        self.stages[start..].iter_mut().rev().fold(grad, |g, s| s.layer.backward(g))
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for s in &self.stages {
            s.layer.params(&s.name, &mut out);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            s.layer.params_mut(&s.name, &mut out);
        }
        out
    }

    /// Output shape of every stage for a batch-1 input, plus the MAC tally.
    pub fn trace(&self, input: &[usize]) -> (Vec<Vec<usize>>, Cost) {
        let mut cost = Cost::default();
        let mut shape = input.to_vec();
        let mut shapes = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            shape = s.layer.cost(&shape, &mut cost);
            shapes.push(shape.clone());
        }
        (shapes, cost)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub trainable_params: usize,
    pub created_from_seed: u64,
}

/// A built classifier: spec, parameters and provenance metadata.
pub struct ModelHandle {
    pub spec: ModelSpec,
    pub net: Network,
    pub metadata: ModelMetadata,
}

impl ModelHandle {
    pub fn backbone(&self) -> BackboneId {
        self.spec.backbone
    }

    /// First stage that receives gradient updates under the freeze policy.
    pub fn train_start(&self) -> usize {
        match self.spec.freeze {
            FreezePolicy::FrozenBackbone => self.net.head_start,
            FreezePolicy::Full => 0,
        }
    }

    /// Training forward pass: frozen stages run in evaluation mode, the rest record.
    pub fn forward_train(&mut self, x: Tensor, mode: Mode) -> Tensor {
        let start = self.train_start();
        let features = self.net.infer_until(x, start);
        self.net.forward_from(features, start, mode)
    }

    pub fn backward(&mut self, grad: Tensor) {
        let start = self.train_start();
        self.net.backward_to(grad, start);
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.net.params_mut() {
            p.zero_grad();
        }
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut().into_iter().map(|(_, p)| p).filter(|p| p.is_trainable()).collect()
    }

    /// Snapshot of every tensor, buffers included.
    pub fn state(&self) -> Vec<Tensor> {
        self.net.params().into_iter().map(|(_, p)| p.value.clone()).collect()
    }

    pub fn restore(&mut self, state: &[Tensor]) {
        for ((_, p), v) in self.net.params_mut().into_iter().zip(state) {
            p.value.assign(v);
        }
    }
}

pub fn count_trainable_parameters(handle: &ModelHandle) -> usize {
    handle.net.params().iter().filter(|(_, p)| p.is_trainable()).map(|(_, p)| p.len()).sum()
}

/// Every parameter except normalization buffers, regardless of freezing.
pub fn count_all_parameters(handle: &ModelHandle) -> usize {
    handle.net.params().iter().filter(|(_, p)| !p.buffer).map(|(_, p)| p.len()).sum()
}

/// Class probabilities for a `(N, 3, H, W)` batch.
pub fn predict_proba(handle: &ModelHandle, images: &Tensor) -> Result<Array2<f32>, ZooError> {
    let s = handle.spec.input_size;
    let shape = images.shape();
    if shape.len() != 4 || shape[1] != 3 || shape[2] != s || shape[3] != s {
        return Err(ZooError::ShapeMismatch { expected: vec![shape.first().copied().unwrap_or(0), 3, s, s], got: shape.to_vec() });
    }
    let logits = handle.net.infer(images.clone()).into_dimensionality::<Ix2>().expect("(N, classes) logits");
    Ok(softmax_rows(&logits))
}

pub fn softmax_rows(logits: &Array2<f32>) -> Array2<f32> {
    let mut p = logits.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let m = row.fold(f32::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    p
}

pub fn cache_dir() -> PathBuf {
    match std::env::var_os(CACHE_ENV) {
        Some(dir) => PathBuf::from(dir),
        None => std::env::var_os("HOME")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."))
            .join(".cache")
            .join("tuber"),
    }
}

pub fn weights_path(backbone: BackboneId) -> PathBuf {
    cache_dir().join(format!("{}.tuberw", backbone.name().to_ascii_lowercase()))
}

pub fn build_classifier(spec: &ModelSpec, seed: u64) -> Result<ModelHandle, ZooError> {
    spec.validate()?;
    let weights = if spec.pretrained {
        let path = weights_path(spec.backbone);
        if !path.is_file() {
            return Err(ZooError::WeightsUnavailable { backbone: spec.backbone, path });
        }
        Some(path)
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, str_hash(spec.backbone.name())]));
    let (mut stages, features) = build_backbone(spec.backbone, spec.input_size, &mut rng);
    let head_start = stages.len();
    let mut head_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, str_hash("head")]));
    stages.push(Stage { name: "head".into(), layer: Box::new(build_head(&spec.head, features, seed, &mut head_rng)) });
    let mut net = Network { stages, head_start };

    if let Some(path) = weights {
        crate::checkpoint::load_backbone_weights(&mut net, &path)?;
    }
    if spec.freeze == FreezePolicy::FrozenBackbone {
        for (name, p) in net.params_mut() {
            if !name.starts_with("head") {
                p.trainable = false;
            }
        }
    }
    let mut handle = ModelHandle {
        spec: spec.clone(),
        net,
        metadata: ModelMetadata { trainable_params: 0, created_from_seed: seed },
    };
    handle.metadata.trainable_params = count_trainable_parameters(&handle);
    Ok(handle)
}

/// `[Dense, BatchNorm, ReLU, Dropout]` per hidden width, then a zero-initialized class layer.
pub fn build_head(head: &HeadConfig, in_features: usize, seed: u64, rng: &mut ChaCha8Rng) -> Sequential {
    let mut seq = Sequential::new();
    let mut width = in_features;
    for (i, &w) in head.hidden_widths.iter().enumerate() {
        let i = i + 1;
        seq.push(format!("fc{i}"), Dense::new(width, w, rng));
        if head.use_batch_norm {
            seq.push(format!("bn{i}"), BatchNorm::new(w));
        }
        seq.push(format!("relu{i}"), Relu::default());
        seq.push(format!("drop{i}"), Dropout::new(head.dropout_rate, mix_seed(&[seed, str_hash("dropout"), i as u64])));
        width = w;
    }
    let mut logits = Dense::new(width, head.n_classes, rng);
    logits.weight.value.fill(0.0);
    seq.push("logits", logits);
    seq
}

fn stage(name: &str, layer: impl Layer + 'static) -> Stage {
    Stage { name: name.to_string(), layer: Box::new(layer) }
}

fn conv_bn_relu(seq: &mut Sequential, prefix: &str, cin: usize, cout: usize, k: usize, stride: usize, rng: &mut ChaCha8Rng) {
    seq.push(format!("{prefix}conv"), Conv2d::new(cin, cout, k, stride, k / 2, false, rng));
    seq.push(format!("{prefix}bn"), BatchNorm::new(cout));
    seq.push(format!("{prefix}relu"), Relu::default());
}


/// Backbone stages and the width of the feature vector they produce.
fn build_backbone(id: BackboneId, input_size: usize, rng: &mut ChaCha8Rng) -> (Vec<Stage>, usize) {
    match id {
        BackboneId::Vgg16 => vgg16(rng),
        BackboneId::Resnet50 => resnet50(rng),
        BackboneId::Densenet121 => densenet121(rng),
        BackboneId::VitB16 => vit(input_size, 16, 768, 12, 12, 3072, rng),
        BackboneId::TinyCnn => tiny_cnn(rng),
        BackboneId::TinyVit => vit(input_size, 16, 64, 2, 4, 256, rng),
    }
}

fn vgg16(rng: &mut ChaCha8Rng) -> (Vec<Stage>, usize) {
    let blocks: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
    let mut stages = Vec::new();
    let mut cin = 3;
    for (b, widths) in blocks.iter().enumerate() {
        let mut seq = Sequential::new();
        for (i, &w) in widths.iter().enumerate() {
            seq.push(format!("conv{}", i + 1), Conv2d::new(cin, w, 3, 1, 1, true, rng));
            seq.push(format!("relu{}", i + 1), Relu::default());
            cin = w;
        }
        if b < 4 {
            seq.push("pool", MaxPool2d::new(2, 2, 0));
        }
        stages.push(stage(&format!("block{}", b + 1), seq));
    }
    stages.push(stage("pool5", MaxPool2d::new(2, 2, 0)));
    stages.push(stage("gap", GlobalAvgPool::default()));
    (stages, 512)
}

fn bottleneck(cin: usize, mid: usize, stride: usize, rng: &mut ChaCha8Rng) -> Sequential {
    let cout = mid * 4;
    let mut body = Sequential::new();
    conv_bn_relu(&mut body, "a_", cin, mid, 1, 1, rng);
    conv_bn_relu(&mut body, "b_", mid, mid, 3, stride, rng);
    body.push("c_conv", Conv2d::new(mid, cout, 1, 1, 0, false, rng));
    body.push("c_bn", BatchNorm::new(cout));
    let block = if stride != 1 || cin != cout {
        let shortcut = Sequential::new()
            .with("conv", Conv2d::new(cin, cout, 1, stride, 0, false, rng))
            .with("bn", BatchNorm::new(cout));
        Residual::projected(body, shortcut)
    } else {
        Residual::identity(body)
    };
    Sequential::new().with("residual", block).with("relu", Relu::default())
}

fn resnet50(rng: &mut ChaCha8Rng) -> (Vec<Stage>, usize) {
    let mut stem = Sequential::new();
    conv_bn_relu(&mut stem, "", 3, 64, 7, 2, rng);
    stem.push("pool", MaxPool2d::new(3, 2, 1));
    let mut stages = vec![stage("stem", stem)];
    let mut cin = 64;
    for (l, (&blocks, &mid)) in [3usize, 4, 6, 3].iter().zip(&[64usize, 128, 256, 512]).enumerate() {
        let mut seq = Sequential::new();
        for b in 0..blocks {
            let stride = if b == 0 && l > 0 { 2 } else { 1 };
            seq.push(format!("block{}", b + 1), bottleneck(cin, mid, stride, rng));
            cin = mid * 4;
        }
        stages.push(stage(&format!("layer{}", l + 1), seq));
    }
    stages.push(stage("gap", GlobalAvgPool::default()));
    (stages, cin)
}

fn densenet121(rng: &mut ChaCha8Rng) -> (Vec<Stage>, usize) {
    const GROWTH: usize = 32;
    const BN_SIZE: usize = 4;
    let mut stem = Sequential::new();
    conv_bn_relu(&mut stem, "", 3, 64, 7, 2, rng);
    stem.push("pool", MaxPool2d::new(3, 2, 1));
    let mut stages = vec![stage("stem", stem)];
    let mut c = 64;
    let sizes = [6usize, 12, 24, 16];
    for (i, &n) in sizes.iter().enumerate() {
        let layers = (0..n)
            .map(|j| {
                let cin = c + j * GROWTH;
                Sequential::new()
                    .with("bn1", BatchNorm::new(cin))
                    .with("relu1", Relu::default())
                    .with("conv1", Conv2d::new(cin, BN_SIZE * GROWTH, 1, 1, 0, false, rng))
                    .with("bn2", BatchNorm::new(BN_SIZE * GROWTH))
                    .with("relu2", Relu::default())
                    .with("conv2", Conv2d::new(BN_SIZE * GROWTH, GROWTH, 3, 1, 1, false, rng))
            })
            .collect();
        stages.push(stage(&format!("dense{}", i + 1), DenseBlock::new(layers)));
        c += n * GROWTH;
        if i + 1 < sizes.len() {
            let trans = Sequential::new()
                .with("bn", BatchNorm::new(c))
                .with("relu", Relu::default())
                .with("conv", Conv2d::new(c, c / 2, 1, 1, 0, false, rng))
                .with("pool", AvgPool2d::new(2));
            stages.push(stage(&format!("trans{}", i + 1), trans));
            c /= 2;
        }
    }
    stages.push(stage("norm5", Sequential::new().with("bn", BatchNorm::new(c)).with("relu", Relu::default())));
    stages.push(stage("gap", GlobalAvgPool::default()));
    (stages, c)
}

fn tiny_cnn(rng: &mut ChaCha8Rng) -> (Vec<Stage>, usize) {
    let mut stages = Vec::new();
    // pixel-wise features pooled into 16×16 cells: a cell's response grows with the
    // share of its pixels that look alike, so saliency stays on the object itself
    let mut b1 = Sequential::new();
    b1.push("pool_in", AvgPool2d::new(4));
    conv_bn_relu(&mut b1, "pix1_", 3, 32, 1, 1, rng);
    conv_bn_relu(&mut b1, "pix2_", 32, 64, 1, 1, rng);
    b1.push("pool_cell", AvgPool2d::new(4));
    stages.push(stage("block1", b1));
    let mut cin = 64;
    for (i, &w) in [128usize, 256, 192].iter().enumerate() {
        let mut seq = Sequential::new();
        conv_bn_relu(&mut seq, "", cin, w, 1, 1, rng);
        stages.push(stage(&format!("block{}", i + 2), seq));
        cin = w;
    }
    stages.push(stage("gap", GlobalAvgPool::default()));
    (stages, cin)
}

#[allow(clippy::too_many_arguments)]
fn vit(
    input_size: usize,
    patch: usize,
    dim: usize,
    depth: usize,
    heads: usize,
    mlp: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Stage>, usize) {
    let grid = input_size / patch;
    let mut stages = vec![stage("patch_embed", Conv2d::new(3, dim, patch, patch, 0, true, rng))];
    stages.push(stage(
        "embed",
        Sequential::new()
            .with("tokens", ToTokens::default())
            .with("cls", ClassToken::new(grid * grid, dim, rng)),
    ));
    let mut encoder = Sequential::new();
    for i in 0..depth {
        let attn = Sequential::new()
            .with("norm", LayerNorm::new(dim))
            .with("attn", MultiHeadAttention::new(dim, heads, rng));
        let mlp_body = Sequential::new()
            .with("norm", LayerNorm::new(dim))
            .with("fc1", Dense::new(dim, mlp, rng))
            .with("gelu", Gelu::default())
            .with("fc2", Dense::new(mlp, dim, rng));
        let block = Sequential::new()
            .with("attn", Residual::identity(attn))
            .with("mlp", Residual::identity(mlp_body));
        encoder.push(format!("block{}", i + 1), block);
    }
    stages.push(stage("encoder", encoder));
    stages.push(stage("norm", LayerNorm::new(dim)));
    stages.push(stage("cls_pool", TakeClassToken::default()));
    (stages, dim)
}
