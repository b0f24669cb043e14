//! Grad-CAM saliency, heatmap overlays and mask-overlap scoring.

use image::{Rgb, RgbImage};
use ndarray::{Array2, Axis, Ix2, Ix3, Ix4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::Mode;
use crate::param::Tensor;
use crate::zoo::ModelHandle;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("LayerNotFound: {layer} (available: {available})")]
    LayerNotFound { layer: String, available: String },
    #[error("NonSpatialLayer: {layer} produces shape {shape:?}")]
    NonSpatialLayer { layer: String, shape: Vec<usize> },
    #[error("InvalidClassIndex: class {class} outside 1..={n_classes}")]
    InvalidClass { class: usize, n_classes: usize },
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("EmptyMask: the mask marks no pixels")]
    EmptyMask,
    #[error("InvalidFraction: {0}")]
    InvalidFraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Saliency {
    /// Non-negative map at the layer's spatial resolution, max-normalized unless degenerate.
    pub map: Array2<f32>,
    /// `map` resized bilinearly to the model input.
    pub upsampled_map: Array2<f32>,
    /// 1-based class whose pre-softmax score was differentiated.
    pub target_class: usize,
    pub layer_id: String,
    /// All-zero map (every weighted activation was clipped).
    pub degenerate: bool,
}

impl Saliency {
    /// Bilinear resize of the layer map to `width × height`.
    pub fn upsample(&self, width: usize, height: usize) -> Array2<f32> {
        resize_bilinear(&self.map, width, height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub layer_id: String,
    pub target_class: usize,
    pub degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub localization_score: Option<f64>,
}

/// Half-pixel-centered bilinear resize.
pub fn resize_bilinear(src: &Array2<f32>, width: usize, height: usize) -> Array2<f32> {
    let (h, w) = src.dim();
    let coord = |o: usize, out: usize, inp: usize| {
        let s = ((o as f32 + 0.5) * inp as f32 / out as f32 - 0.5).clamp(0.0, (inp - 1) as f32);
        let a = s.floor() as usize;
        (a, (a + 1).min(inp - 1), s - a as f32)
    };
    Array2::from_shape_fn((height, width), |(y, x)| {
        let (ya, yb, dy) = coord(y, height, h);
        let (xa, xb, dx) = coord(x, width, w);
        let top = src[[ya, xa]] * (1.0 - dx) + src[[ya, xb]] * dx;
        let bottom = src[[yb, xa]] * (1.0 - dx) + src[[yb, xb]] * dx;
        top * (1.0 - dy) + bottom * dy
    })
}

/// How a layer's activations map onto a spatial grid.
enum Grid {
    Channels,
    Tokens { side: usize },
}

fn layer_grid(layer: &str, shape: &[usize]) -> Result<Grid, ExplainError> {
    let non_spatial = || ExplainError::NonSpatialLayer { layer: layer.to_string(), shape: shape.to_vec() };
    match shape.len() {
        4 if shape[2] > 1 || shape[3] > 1 => Ok(Grid::Channels),
        3 => {
            let patches = shape[1].checked_sub(1).ok_or_else(non_spatial)?;
            let side = (patches as f64).sqrt().round() as usize;
            if side > 0 && side * side == patches {
                Ok(Grid::Tokens { side })
            } else {
                Err(non_spatial())
            }
        }
        _ => Err(non_spatial()),
    }
}

/// `(K, H, W)` view of activations or gradients at a layer; class tokens are dropped.
fn to_channel_maps(t: &Tensor, grid: &Grid) -> ndarray::Array3<f32> {
    match grid {
        Grid::Channels => {
            let t4 = t.view().into_dimensionality::<Ix4>().expect("NCHW");
            t4.index_axis(Axis(0), 0).to_owned()
        }
        Grid::Tokens { side } => {
            let t3 = t.view().into_dimensionality::<Ix3>().expect("(N, T, D)");
            let tokens = t3.index_axis(Axis(0), 0);
            let patches = tokens.slice(ndarray::s![1.., ..]);
            let d = patches.ncols();
            patches
                .t()
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((d, *side, *side))
                .expect("square token grid")
        }
    }
}

/// Grad-CAM of `target_class` (1-based) at `layer_id`, or the backbone's default layer.
/// `image` is a normalized `(3, H, W)` or `(1, 3, H, W)` tensor.
pub fn grad_cam(
    handle: &mut ModelHandle,
    image: &Tensor,
    target_class: usize,
    layer_id: Option<&str>,
) -> Result<Saliency, ExplainError> {
    let layer = layer_id.unwrap_or_else(|| handle.backbone().default_cam_layer()).to_string();
    let n_classes = handle.spec.n_classes();
    if target_class == 0 || target_class > n_classes {
        return Err(ExplainError::InvalidClass { class: target_class, n_classes });
    }
    let x = match image.ndim() {
        3 => image.clone().insert_axis(Axis(0)),
        4 if image.shape()[0] == 1 => image.clone(),
        _ => return Err(ExplainError::ShapeMismatch(format!("expected one image, got {:?}", image.shape()))),
    };
    let size = handle.spec.input_size;
    if x.shape()[1..] != [3, size, size] {
        return Err(ExplainError::ShapeMismatch(format!("expected (3, {size}, {size}), got {:?}", &x.shape()[1..])));
    }
    let idx = handle.net.stage_index(&layer).ok_or_else(|| ExplainError::LayerNotFound {
        layer: layer.clone(),
        available: handle.net.stage_names().join(", "),
    })?;
    if idx >= handle.net.head_start {
        let (shapes, _) = handle.net.trace(x.shape());
        return Err(ExplainError::NonSpatialLayer { layer, shape: shapes[idx].clone() });
    }
    let (shapes, _) = handle.net.trace(x.shape());
    let grid = layer_grid(&layer, &shapes[idx])?;

    let activations = handle.net.infer_until(x, idx + 1);
    let logits = handle.net.forward_from(activations.clone(), idx + 1, Mode::EvalGrad);
    let logits = logits.into_dimensionality::<Ix2>().expect("(1, classes) logits");
    let mut seed = Array2::<f32>::zeros(logits.raw_dim());
    seed[[0, target_class - 1]] = 1.0;
    let grads = handle.net.backward_to(seed.into_dyn(), idx + 1);
    handle.zero_grad();

    let a = to_channel_maps(&activations, &grid);
    let g = to_channel_maps(&grads, &grid);
    let (k, h, w) = a.dim();
    let mut cam = Array2::<f32>::zeros((h, w));
    for c in 0..k {
        let alpha = g.index_axis(Axis(0), c).mean().unwrap_or(0.0);
        if alpha != 0.0 {
            cam.scaled_add(alpha, &a.index_axis(Axis(0), c));
        }
    }
    cam.mapv_inplace(|v| v.max(0.0));
    let max = cam.fold(0.0f32, |m, &v| m.max(v));
    let degenerate = max <= 0.0;
    if !degenerate {
        cam.mapv_inplace(|v| v / max);
    }
    let upsampled_map = resize_bilinear(&cam, size, size);
    Ok(Saliency { map: cam, upsampled_map, target_class, layer_id: layer, degenerate })
}

/// Jet-style colormap of a `[0, 1]` value.
pub fn colormap(v: f32) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let channel = |center: f32| ((1.5 - (4.0 * v - center).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [channel(3.0), channel(2.0), channel(1.0)]
}

/// Alpha-blends the colormapped saliency over `image` at the image's own resolution.
pub fn overlay(saliency: &Saliency, image: &RgbImage, alpha: f32) -> RgbImage {
    let alpha = alpha.clamp(0.0, 1.0);
    let (w, h) = (image.width() as usize, image.height() as usize);
    let heat = saliency.upsample(w, h);
    RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let c = colormap(heat[[y as usize, x as usize]]);
        let p = image.get_pixel(x, y);
        Rgb(std::array::from_fn(|i| {
            (p[i] as f32 * (1.0 - alpha) + c[i] as f32 * alpha).round().clamp(0.0, 255.0) as u8
        }))
    })
}

/// Fraction of the `top_fraction` highest-saliency pixels that lie inside `mask`. Ties
/// are broken by row-major pixel index.
pub fn localization_score(saliency: &Array2<f32>, mask: &Array2<bool>, top_fraction: f64) -> Result<f64, ExplainError> {
    if saliency.dim() != mask.dim() {
        return Err(ExplainError::ShapeMismatch(format!("saliency {:?} vs mask {:?}", saliency.dim(), mask.dim())));
    }
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(ExplainError::InvalidFraction(top_fraction));
    }
    if !mask.iter().any(|&m| m) {
        return Err(ExplainError::EmptyMask);
    }
    let values: Vec<f32> = saliency.iter().copied().collect();
    let inside: Vec<bool> = mask.iter().copied().collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = ((top_fraction * values.len() as f64).ceil() as usize).clamp(1, values.len());
    let hits = order[..top].iter().filter(|&&i| inside[i]).count();
    Ok(hits as f64 / top as f64)
}

/// Score of a saliency map that ranks every pixel equally: the mask's area fraction.
pub fn uniform_baseline(mask: &Array2<bool>) -> f64 {
    mask.iter().filter(|&&m| m).count() as f64 / mask.len().max(1) as f64
}

/// Boolean mask from an 8-bit mask image (non-zero = inside).
pub fn mask_from_gray(mask: &image::GrayImage) -> Array2<bool> {
    Array2::from_shape_fn((mask.height() as usize, mask.width() as usize), |(y, x)| mask.get_pixel(x as u32, y as u32)[0] > 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Conv2d, Dense, GlobalAvgPool, Sequential};
    use crate::zoo::{BackboneId, HeadConfig, ModelMetadata, ModelSpec, Network, Stage};
    use ndarray::IxDyn;
    use rand::SeedableRng;

    /// Feature map of ones; class 1 score = `w0 ·` its mean, class 2 = `w1 ·` its mean.
    fn constant_model(w0: f32, w1: f32) -> ModelHandle {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::new(3, 1, 16, 16, 0, true, &mut rng);
        conv.weight.value.fill(0.0);
        conv.bias.as_mut().unwrap().value.fill(1.0);
        let mut dense = Dense::new(1, 2, &mut rng);
        dense.weight.value = ndarray::arr2(&[[w0, w1]]).into_dyn();
        let stages = vec![
            Stage { name: "features".into(), layer: Box::new(conv) },
            Stage { name: "gap".into(), layer: Box::new(GlobalAvgPool::default()) },
            Stage { name: "head".into(), layer: Box::new(Sequential::new().with("logits", dense)) },
        ];
        ModelHandle {
            spec: ModelSpec::new(BackboneId::TinyCnn, HeadConfig::with_widths(&[], 2)),
            net: Network { stages, head_start: 2 },
            metadata: ModelMetadata { trainable_params: 0, created_from_seed: 0 },
        }
    }

    fn image() -> Tensor {
        Tensor::zeros(IxDyn(&[3, 224, 224]))
    }

    #[test]
    fn constant_gradient_gives_uniform_map() {
        let s = grad_cam(&mut constant_model(1.0, 0.0), &image(), 1, Some("features")).unwrap();
        assert_eq!(s.map.dim(), (14, 14));
        assert!(!s.degenerate);
        assert!(s.map.iter().all(|&v| (v - 1.0).abs() < 1e-6));
        assert_eq!(s.upsampled_map.dim(), (224, 224));
    }

    #[test]
    fn negative_gradients_are_degenerate() {
        let s = grad_cam(&mut constant_model(-1.0, 0.0), &image(), 1, Some("features")).unwrap();
        assert!(s.degenerate);
        assert!(s.map.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_layers_and_classes() {
        let mut m = constant_model(1.0, 0.0);
        assert!(matches!(grad_cam(&mut m, &image(), 1, Some("nope")), Err(ExplainError::LayerNotFound { .. })));
        assert!(matches!(grad_cam(&mut m, &image(), 1, Some("gap")), Err(ExplainError::NonSpatialLayer { .. })));
        assert!(matches!(grad_cam(&mut m, &image(), 3, Some("features")), Err(ExplainError::InvalidClass { .. })));
    }

    #[test]
    fn overlay_extremes() {
        let s = grad_cam(&mut constant_model(1.0, 0.0), &image(), 1, Some("features")).unwrap();
        let img = RgbImage::from_fn(30, 20, |x, y| Rgb([x as u8 * 3, y as u8 * 5, 77]));
        assert_eq!(overlay(&s, &img, 0.0), img);
        let pure = overlay(&s, &img, 1.0);
        assert_eq!(pure.dimensions(), (30, 20));
        assert!(pure.pixels().all(|p| p.0 == colormap(1.0)));
    }

    #[test]
    fn localization_cases() {
        let mask = Array2::from_shape_fn((10, 10), |(y, _)| y == 3);
        let exact = mask.mapv(|m| if m { 1.0 } else { 0.0 });
        assert_eq!(localization_score(&exact, &mask, 0.1).unwrap(), 1.0);
        let uniform = Array2::from_elem((10, 10), 0.5);
        assert!((localization_score(&uniform, &mask, 1.0).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(uniform_baseline(&mask), 0.1);
        let empty = Array2::from_elem((10, 10), false);
        assert!(matches!(localization_score(&uniform, &empty, 0.1), Err(ExplainError::EmptyMask)));
    }
}
