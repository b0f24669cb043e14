//! Training-time image augmentation and the evaluation resize.
//!
//! Geometric augmentations are folded into one inverse affine map so each output pixel is
//! sampled exactly once from the source image.

use image::RgbImage;
use ndarray::{Array3, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::param::Tensor;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// Area fraction range of the random resized crop.
    pub crop_scale: (f32, f32),
    /// Aspect ratio range of the random resized crop.
    pub crop_ratio: (f32, f32),
    pub horizontal_flip: f32,
    pub vertical_flip: f32,
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f32,
    /// Maximum translation as a fraction of the output size.
    pub translate: f32,
    /// Maximum absolute shear in degrees.
    pub shear_deg: f32,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            crop_scale: (0.8, 1.0),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
            horizontal_flip: 0.5,
            vertical_flip: 0.5,
            rotation_deg: 20.0,
            translate: 0.05,
            shear_deg: 5.0,
            brightness: 0.1,
            contrast: 0.1,
            saturation: 0.1,
        }
    }
}

impl AugmentationConfig {
    /// No augmentation: output equals the evaluation resize.
    pub fn identity() -> Self {
        Self {
            crop_scale: (1.0, 1.0),
            crop_ratio: (1.0, 1.0),
            horizontal_flip: 0.0,
            vertical_flip: 0.0,
            rotation_deg: 0.0,
            translate: 0.0,
            shear_deg: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
        }
    }
}

/// Source crop box `(x0, y0, w, h)` in pixels.
fn sample_crop(rng: &mut ChaCha8Rng, cfg: &AugmentationConfig, w: f32, h: f32) -> (f32, f32, f32, f32) {
    if cfg.crop_scale == (1.0, 1.0) && cfg.crop_ratio == (1.0, 1.0) {
        return (0.0, 0.0, w, h);
    }
    let area = w * h;
    for _ in 0..10 {
        let s = uniform(rng, cfg.crop_scale.0, cfg.crop_scale.1);
        let log_r = uniform(rng, cfg.crop_ratio.0.ln(), cfg.crop_ratio.1.ln());
        let r = log_r.exp();
        let cw = (s * area * r).sqrt();
        let ch = (s * area / r).sqrt();
        if cw <= w && ch <= h {
            let x0 = uniform(rng, 0.0, w - cw);
            let y0 = uniform(rng, 0.0, h - ch);
            return (x0, y0, cw, ch);
        }
    }
    (0.0, 0.0, w, h)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> f32 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Samples an augmented `size × size` view of `image` as a `(3, size, size)` array in
/// `[0, 1]`. Identical `(image, config, seed)` give identical output.
pub fn augment(image: &RgbImage, config: &AugmentationConfig, seed: u64, size: usize) -> Array3<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (image.width() as f32, image.height() as f32);
    let (x0, y0, cw, ch) = sample_crop(&mut rng, config, w, h);
    let flip_h = rng.random::<f32>() < config.horizontal_flip;
    let flip_v = rng.random::<f32>() < config.vertical_flip;
    let angle = uniform(&mut rng, -config.rotation_deg, config.rotation_deg).to_radians();
    let tx = uniform(&mut rng, -config.translate, config.translate) * 2.0;
    let ty = uniform(&mut rng, -config.translate, config.translate) * 2.0;
    let shear = uniform(&mut rng, -config.shear_deg, config.shear_deg).to_radians().tan();
    let jitter = |rng: &mut ChaCha8Rng, amount: f32| 1.0 + uniform(rng, -amount, amount);
    let brightness = jitter(&mut rng, config.brightness);
    let contrast = jitter(&mut rng, config.contrast);
    let saturation = jitter(&mut rng, config.saturation);

    // forward map in normalized output coordinates: flip, shear, rotate, translate
    let (sin, cos) = angle.sin_cos();
    let fx = if flip_h { -1.0 } else { 1.0 };
    let fy = if flip_v { -1.0 } else { 1.0 };
    // M = R · S · F with S = [[1, shear], [0, 1]]
    let m = [[cos * fx, (cos * shear - sin) * fy], [sin * fx, (sin * shear + cos) * fy]];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];

    let src = image.as_raw();
    let (iw, ih) = (image.width() as usize, image.height() as usize);
    let mut out = Array3::<f32>::zeros((3, size, size));
    let scale = 2.0 / size as f32;
    for v in 0..size {
        let qy = (v as f32 + 0.5) * scale - 1.0 - ty;
        for u in 0..size {
            let qx = (u as f32 + 0.5) * scale - 1.0 - tx;
            let px = inv[0][0] * qx + inv[0][1] * qy;
            let py = inv[1][0] * qx + inv[1][1] * qy;
            let sx = x0 + (px + 1.0) * 0.5 * cw - 0.5;
            let sy = y0 + (py + 1.0) * 0.5 * ch - 0.5;
            if sx < -0.5 || sy < -0.5 || sx > iw as f32 - 0.5 || sy > ih as f32 - 0.5 {
                continue;
            }
            let sx = sx.clamp(0.0, (iw - 1) as f32);
            let sy = sy.clamp(0.0, (ih - 1) as f32);
            let (xa, ya) = (sx.floor() as usize, sy.floor() as usize);
            let (xb, yb) = ((xa + 1).min(iw - 1), (ya + 1).min(ih - 1));
            let (dx, dy) = (sx - xa as f32, sy - ya as f32);
            for c in 0..3 {
                let p = |x: usize, y: usize| src[(y * iw + x) * 3 + c] as f32;
                let top = p(xa, ya) * (1.0 - dx) + p(xb, ya) * dx;
                let bottom = p(xa, yb) * (1.0 - dx) + p(xb, yb) * dx;
                out[[c, v, u]] = (top * (1.0 - dy) + bottom * dy) / 255.0;
            }
        }
    }
    if brightness != 1.0 || contrast != 1.0 || saturation != 1.0 {
        color_jitter(&mut out, brightness, contrast, saturation);
    }
    out
}

fn color_jitter(img: &mut Array3<f32>, brightness: f32, contrast: f32, saturation: f32) {
    img.mapv_inplace(|v| (v * brightness).clamp(0.0, 1.0));
    let gray = |img: &Array3<f32>, y: usize, x: usize| 0.299 * img[[0, y, x]] + 0.587 * img[[1, y, x]] + 0.114 * img[[2, y, x]];
    let (h, w) = (img.dim().1, img.dim().2);
    let mut mean = 0.0;
    for y in 0..h {
        for x in 0..w {
            mean += gray(img, y, x);
        }
    }
    mean /= (h * w) as f32;
    img.mapv_inplace(|v| ((v - mean) * contrast + mean).clamp(0.0, 1.0));
    for y in 0..h {
        for x in 0..w {
            let g = gray(img, y, x);
            for c in 0..3 {
                img[[c, y, x]] = ((img[[c, y, x]] - g) * saturation + g).clamp(0.0, 1.0);
            }
        }
    }
}

/// Deterministic evaluation view: plain bilinear resize.
pub fn resize_eval(image: &RgbImage, size: usize) -> Array3<f32> {
    augment(image, &AugmentationConfig::identity(), 0, size)
}

/// Per-channel ImageNet standardization of a `[0, 1]` image.
pub fn normalize(img: &mut Array3<f32>) {
    for (c, mut plane) in img.outer_iter_mut().enumerate() {
        plane.mapv_inplace(|v| (v - IMAGENET_MEAN[c]) / IMAGENET_STD[c]);
    }
}

/// Stacks `(3, H, W)` images into an `(N, 3, H, W)` batch.
pub fn stack(images: &[&Array3<f32>]) -> Tensor {
    let (c, h, w) = images.first().map(|a| a.dim()).unwrap_or((3, 0, 0));
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        data.extend(img.iter().copied());
    }
    Tensor::from_shape_vec(IxDyn(&[images.len(), c, h, w]), data).expect("consistent image sizes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn checker() -> RgbImage {
        RgbImage::from_fn(50, 40, |x, y| if (x / 5 + y / 5) % 2 == 0 { Rgb([200, 30, 90]) } else { Rgb([10, 120, 250]) })
    }

    #[test]
    fn identity_equals_resize_for_any_seed() {
        let img = checker();
        let a = augment(&img, &AugmentationConfig::identity(), 1, 32);
        let b = augment(&img, &AugmentationConfig::identity(), 99, 32);
        assert_eq!(a, b);
        assert_eq!(a, resize_eval(&img, 32));
        assert_eq!(a.dim(), (3, 32, 32));
    }

    #[test]
    fn identity_at_native_size_is_exact() {
        let img = checker();
        let sq = RgbImage::from_fn(40, 40, |x, y| *img.get_pixel(x, y));
        let out = resize_eval(&sq, 40);
        for y in 0..40 {
            for x in 0..40 {
                let p = sq.get_pixel(x as u32, y as u32);
                assert!((out[[1, y, x]] - p[1] as f32 / 255.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn seeded_and_varied() {
        let img = checker();
        let cfg = AugmentationConfig::default();
        assert_eq!(augment(&img, &cfg, 5, 24), augment(&img, &cfg, 5, 24));
        assert_ne!(augment(&img, &cfg, 5, 24), augment(&img, &cfg, 6, 24));
        let out = augment(&img, &cfg, 7, 24);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
