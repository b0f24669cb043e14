//! Synthetic stored-potato dataset with exact ground truth.
//!
//! Weights decay linearly with a per-potato rate, so the shelf life is known analytically.
//! Images show a shaded tuber on a dark background; wrinkle lines accumulate with weight
//! loss and pale sprouts appear after a per-potato onset day and grow with age. Every
//! random choice is keyed by `(seed, potato index)` so potatoes can be generated in any
//! order.

use std::f64::consts::PI;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{write_manifest, DatasetManifest, PotatoObservation, WeightTrajectory};
use crate::labeling::{cumulative_weight_loss, MAX_CLASSES, MIN_CLASSES, SHELF_LIFE_THRESHOLD_PCT};
use crate::seed::mix_seed;

/// Reference image side; geometry constants below are expressed at this size.
const REFERENCE_SIZE: f64 = 250.0;
const MAX_SPROUTS: u32 = 5;
const MAX_SPROUT_LENGTH: f64 = 60.0;
const SPROUT_INTERVAL_DAYS: f64 = 16.0;
const WRINKLES_PER_PCT: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("output directory {path} is not writable: {reason}")]
    OutputDirNotWritable { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_potatoes: usize,
    pub horizon_days: u32,
    pub sample_interval_days: u32,
    pub image_size: u32,
    pub base_loss_rate_pct_per_day: f64,
    /// Relative half-width of the uniform per-potato jitter on the loss rate.
    pub loss_rate_jitter: f64,
    pub sprout_onset_day: f64,
    /// Half-width in days of the uniform jitter on the sprout onset.
    pub sprout_onset_jitter: f64,
    /// Upper bound on the multiplicative weighing noise, in percent.
    pub weight_noise_pct: f64,
    pub potatoes_per_tray: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_potatoes: 6,
            horizon_days: 200,
            sample_interval_days: 5,
            image_size: 250,
            base_loss_rate_pct_per_day: 0.1,
            loss_rate_jitter: 0.25,
            sprout_onset_day: 40.0,
            sprout_onset_jitter: 15.0,
            weight_noise_pct: 0.2,
            potatoes_per_tray: 6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n_potatoes == 0 || self.horizon_days == 0 || self.sample_interval_days == 0 || self.potatoes_per_tray == 0
        {
            return bad("counts must be positive");
        }
        if self.image_size < 64 {
            return bad("image_size must be at least 64");
        }
        if !(0.0..1.0).contains(&self.loss_rate_jitter) || self.base_loss_rate_pct_per_day <= 0.0 {
            return bad("loss rate must be positive with jitter in [0, 1)");
        }
        let max_loss = self.base_loss_rate_pct_per_day * (1.0 + self.loss_rate_jitter) * f64::from(self.horizon_days);
        if max_loss >= 90.0 {
            return bad("fastest potato would lose 90% or more of its weight within the horizon");
        }
        if !(0.0..=1.0).contains(&self.weight_noise_pct) || self.sprout_onset_jitter < 0.0 {
            return bad("noise must be within [0, 1]% and onset jitter non-negative");
        }
        Ok(())
    }

    pub fn days(&self) -> impl Iterator<Item = u32> + '_ {
        (0..=self.horizon_days).step_by(self.sample_interval_days as usize)
    }

    fn potato_seed(&self, index: usize) -> u64 {
        mix_seed(&[self.seed, index as u64, 0x9077])
    }
}

/// Per-potato quantities drawn once from `(seed, index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotatoParams {
    pub potato_id: String,
    pub tray_id: String,
    pub w0: f64,
    pub loss_rate_pct_per_day: f64,
    pub sprout_onset_day: f64,
    pub appearance_seed: u64,
}

impl PotatoParams {
    pub fn new(config: &SynthConfig, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.potato_seed(index));
        let w0 = 80.0 + 60.0 * rng.random::<f64>();
        let rate = config.base_loss_rate_pct_per_day * (1.0 + config.loss_rate_jitter * (2.0 * rng.random::<f64>() - 1.0));
        let onset = config.sprout_onset_day + config.sprout_onset_jitter * (2.0 * rng.random::<f64>() - 1.0);
        Self {
            potato_id: format!("P{:02}", index + 1),
            tray_id: format!("T{}", index / config.potatoes_per_tray + 1),
            w0: round_mg(w0),
            loss_rate_pct_per_day: rate,
            sprout_onset_day: onset.max(0.0),
            appearance_seed: rng.random(),
        }
    }

    /// Noise-free day on which the linear model reaches the shelf-life threshold.
    pub fn analytic_shelf_life_day(&self) -> f64 {
        SHELF_LIFE_THRESHOLD_PCT / self.loss_rate_pct_per_day
    }

    pub fn sprout_state(&self, day: u32) -> (u32, f64) {
        let elapsed = f64::from(day) - self.sprout_onset_day;
        if elapsed < 0.0 {
            return (0, 0.0);
        }
        let count = (1 + (elapsed / SPROUT_INTERVAL_DAYS).floor() as u32).min(MAX_SPROUTS);
        let length = (10.0 + 0.9 * elapsed).min(MAX_SPROUT_LENGTH);
        (count, length)
    }
}

/// Balances are read to the milligram.
fn round_mg(w: f64) -> f64 {
    (w * 1000.0).round() / 1000.0
}

/// Weight series `W(t) = W₀·(1 − r·t/100)·(1 + η_t)` with `|η_t|` bounded so the series
/// stays strictly decreasing. Day 0 carries no noise.
pub fn simulate_weight_trajectory(config: &SynthConfig, index: usize) -> WeightTrajectory {
    let p = PotatoParams::new(config, index);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.potato_seed(index), 0x3e16]));
    let step = p.loss_rate_pct_per_day * f64::from(config.sample_interval_days) / 100.0;
    let amplitude = (config.weight_noise_pct / 100.0).min(0.45 * step);
    let points = config
        .days()
        .map(|day| {
            let clean = p.w0 * (1.0 - p.loss_rate_pct_per_day * f64::from(day) / 100.0);
            let eta = if day == 0 { 0.0 } else { amplitude * (2.0 * rng.random::<f64>() - 1.0) };
            (day, round_mg(clean * (1.0 + eta)))
        })
        .collect();
    WeightTrajectory::new(p.potato_id, points).expect("at least two sample days")
}

/// Visual age of a potato on one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeState {
    pub weight_loss_pct: f64,
    pub sprout_count: u32,
    /// Sprout length in pixels at the 250 px reference size.
    pub sprout_length: f64,
}

#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: RgbImage,
    /// 255 where a sprout was painted.
    pub sprout_mask: GrayImage,
    /// 255 where a wrinkle line was painted (before sprouts were drawn over it).
    pub wrinkle_mask: GrayImage,
}

struct Canvas {
    image: RgbImage,
    size: i64,
}

impl Canvas {
    fn disc(&mut self, cx: f64, cy: f64, radius: f64, mut paint: impl FnMut(&mut Rgb<u8>, u32, u32)) {
        let r = radius.max(0.5);
        let (x0, x1) = ((cx - r).floor() as i64, (cx + r).ceil() as i64);
        let (y0, y1) = ((cy - r).floor() as i64, (cy + r).ceil() as i64);
        for y in y0.max(0)..=y1.min(self.size - 1) {
            for x in x0.max(0)..=x1.min(self.size - 1) {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    paint(self.image.get_pixel_mut(x as u32, y as u32), x as u32, y as u32);
                }
            }
        }
    }
}

/// Renders one potato. `appearance_seed` fixes the tuber's shape, speckles, wrinkle and
/// sprout geometry; `frame_seed` only drives per-pixel sensor noise.
pub fn render_potato_image(age: &AgeState, appearance_seed: u64, frame_seed: u64, size: u32) -> Rendered {
    let k = f64::from(size) / REFERENCE_SIZE;
    let mut look = ChaCha8Rng::seed_from_u64(appearance_seed);
    let mut noise = ChaCha8Rng::seed_from_u64(mix_seed(&[appearance_seed, frame_seed]));

    let half = f64::from(size) / 2.0;
    let cx = half + (look.random::<f64>() - 0.5) * 12.0 * k;
    let cy = half + (look.random::<f64>() - 0.5) * 12.0 * k;
    let semi_a = (52.0 + 6.0 * look.random::<f64>()) * k;
    let semi_b = (40.0 + 6.0 * look.random::<f64>()) * k;
    let tilt = PI * look.random::<f64>();
    let (sin_t, cos_t) = tilt.sin_cos();
    let base = [
        196.0 + 12.0 * (look.random::<f64>() - 0.5),
        160.0 + 12.0 * (look.random::<f64>() - 0.5),
        104.0 + 12.0 * (look.random::<f64>() - 0.5),
    ];
    let loss = age.weight_loss_pct.max(0.0);
    let shrink = (1.0 - loss / 100.0).cbrt();
    let brightness = (1.0 - 0.012 * loss).max(0.3);
    let (ra, rb) = (semi_a * shrink, semi_b * shrink);

    // tuber-local normalized coordinates: (u, v) with u² + v² ≤ 1 inside the tuber
    let to_local = |x: f64, y: f64| {
        let (dx, dy) = (x - cx, y - cy);
        ((dx * cos_t + dy * sin_t) / ra, (-dx * sin_t + dy * cos_t) / rb)
    };
    let to_image = |u: f64, v: f64, a: f64, b: f64| {
        let (lx, ly) = (u * a, v * b);
        (cx + lx * cos_t - ly * sin_t, cy + lx * sin_t + ly * cos_t)
    };

    let speckles: Vec<(f64, f64, f64)> = (0..30)
        .map(|_| {
            let r = 0.9 * look.random::<f64>().sqrt();
            let a = 2.0 * PI * look.random::<f64>();
            (r * a.cos(), r * a.sin(), (1.5 + 1.5 * look.random::<f64>()) / 50.0)
        })
        .collect();

    let mut image = RgbImage::new(size, size);
    for (x, y, px) in image.enumerate_pixels_mut() {
        let (u, v) = to_local(f64::from(x) + 0.5, f64::from(y) + 0.5);
        let rho2 = u * u + v * v;
        let jitter = (noise.random::<f64>() - 0.5) * 10.0;
        *px = if rho2 <= 1.0 {
            let shade = brightness * (0.82 + 0.18 * (1.0 - rho2));
            let speck = if speckles.iter().any(|&(su, sv, sr)| (u - su).powi(2) + (v - sv).powi(2) <= sr * sr) {
                0.78
            } else {
                1.0
            };
            Rgb(base.map(|c| clamp_u8(c * shade * speck + jitter)))
        } else {
            Rgb([28.0, 26.0, 30.0].map(|c| clamp_u8(c + jitter)))
        };
    }
    let mut canvas = Canvas { image, size: i64::from(size) };

    // Wrinkles: a fixed per-potato sequence of arcs, of which the first ⌊2·loss⌋ are drawn.
    let mut wrinkle_mask = GrayImage::new(size, size);
    let n_wrinkles = (WRINKLES_PER_PCT * loss).floor() as usize;
    let mut wrinkle_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[appearance_seed, 0x3121]));
    for _ in 0..n_wrinkles {
        let r = 0.75 * wrinkle_rng.random::<f64>().sqrt();
        let a = 2.0 * PI * wrinkle_rng.random::<f64>();
        let heading = 2.0 * PI * wrinkle_rng.random::<f64>();
        let length = 0.25 + 0.2 * wrinkle_rng.random::<f64>();
        let curl = (wrinkle_rng.random::<f64>() - 0.5) * 3.0;
        let (mut u, mut v) = (r * a.cos(), r * a.sin());
        let steps = 24;
        for s in 0..=steps {
            let h = heading + curl * f64::from(s) / f64::from(steps);
            let (x, y) = to_image(u, v, ra, rb);
            if u * u + v * v < 0.95 {
                canvas.disc(x, y, 0.9 * k, |p, px, py| {
                    p.0 = p.0.map(|c| (f64::from(c) * 0.5) as u8);
                    wrinkle_mask.put_pixel(px, py, Luma([255]));
                });
            }
            u += length / f64::from(steps) * h.cos();
            v += length / f64::from(steps) * h.sin() * semi_a / semi_b;
        }
    }

    // Sprouts grow outward from fixed points near the original tuber outline.
    let mut sprout_mask = GrayImage::new(size, size);
    let mut sprout_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[appearance_seed, 0x5b70]));
    let first_angle = 2.0 * PI * sprout_rng.random::<f64>();
    let geometry: Vec<(f64, f64)> = (0..MAX_SPROUTS)
        .map(|i| {
            let angle = first_angle + 2.0 * PI * f64::from(i) / f64::from(MAX_SPROUTS)
                + (sprout_rng.random::<f64>() - 0.5) * 0.5;
            let bend = (sprout_rng.random::<f64>() - 0.5) * 0.7;
            (angle, bend)
        })
        .collect();
    let length = age.sprout_length.max(0.0) * k;
    let radius = (4.0 + 0.15 * age.sprout_length.max(0.0)) * k;
    let sprout_color = [226.0, 230.0, 188.0];
    for &(angle, bend) in geometry.iter().take(age.sprout_count.min(MAX_SPROUTS) as usize) {
        let (u, v) = (0.85 * angle.cos(), 0.85 * angle.sin());
        let (mut x, mut y) = to_image(u, v, semi_a, semi_b);
        // outward normal of the ellipse at the anchor
        let (nu, nv) = (angle.cos() / semi_a, angle.sin() / semi_b);
        let (nx, ny) = (nu * cos_t - nv * sin_t, nu * sin_t + nv * cos_t);
        let heading0 = ny.atan2(nx);
        let total = length + 0.15 * semi_a;
        let steps = total.ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64 * total;
            canvas.disc(x, y, radius, |p, px, py| {
                *p = Rgb(sprout_color.map(clamp_u8));
                sprout_mask.put_pixel(px, py, Luma([255]));
            });
            let h = heading0 + bend * t / (MAX_SPROUT_LENGTH * k);
            x += total / steps as f64 * h.cos();
            y += total / steps as f64 * h.sin();
        }
    }
    Rendered { image: canvas.image, sprout_mask, wrinkle_mask }
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Ground truth carried by the generator for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub potato_id: String,
    pub day: u32,
    pub image_path: String,
    pub mask_path: String,
    pub weight_g: f64,
    pub weight_loss_pct: f64,
    pub sprouted: bool,
    pub sprout_count: u32,
    pub sprout_length_px: f64,
    pub shelf_life_day: f64,
    /// Loss class for every scheme size, index 0 ↔ 2 classes.
    pub loss_class_by_n: Vec<usize>,
}

impl GroundTruthRecord {
    pub fn loss_class(&self, n_classes: usize) -> usize {
        self.loss_class_by_n[n_classes - MIN_CLASSES]
    }
}

/// Class of a loss value computed from the bin width rather than edge comparisons.
fn reference_class(loss: f64, n_classes: usize) -> usize {
    let v = loss.max(0.0);
    if v >= SHELF_LIFE_THRESHOLD_PCT {
        n_classes
    } else {
        ((v * (n_classes - 1) as f64 / SHELF_LIFE_THRESHOLD_PCT).floor() as usize + 1).min(n_classes - 1)
    }
}

/// Writes `images/`, `masks/`, `manifest.csv` and `ground_truth.json` under `out_dir`.
pub fn generate_synthetic_dataset(
    config: &SynthConfig,
    out_dir: &Path,
) -> Result<(DatasetManifest, Vec<GroundTruthRecord>), SynthError> {
    config.validate()?;
    let not_writable =
        |e: &dyn std::fmt::Display| SynthError::OutputDirNotWritable { path: out_dir.display().to_string(), reason: e.to_string() };
    for sub in ["images", "masks"] {
        std::fs::create_dir_all(out_dir.join(sub)).map_err(|e| not_writable(&e))?;
    }

    let mut observations = Vec::new();
    let mut truth = Vec::new();
    for index in 0..config.n_potatoes {
        let params = PotatoParams::new(config, index);
        let trajectory = simulate_weight_trajectory(config, index);
        for &(day, weight_g) in &trajectory.points {
            let weight_loss_pct = cumulative_weight_loss(trajectory.w0, weight_g).expect("positive w0");
            let (sprout_count, sprout_length) = params.sprout_state(day);
            let age = AgeState { weight_loss_pct, sprout_count, sprout_length };
            let rendered = render_potato_image(&age, params.appearance_seed, u64::from(day), config.image_size);
            let stem = format!("{}_{}", params.potato_id, day);
            let image_path = format!("images/{stem}.png");
            let mask_path = format!("masks/{stem}.png");
            rendered.image.save(out_dir.join(&image_path)).map_err(|e| not_writable(&e))?;
            rendered.sprout_mask.save(out_dir.join(&mask_path)).map_err(|e| not_writable(&e))?;

            let sprouted = sprout_count > 0;
            observations.push(PotatoObservation {
                potato_id: params.potato_id.clone(),
                tray_id: params.tray_id.clone(),
                day,
                image_ref: image_path.clone(),
                weight_g,
                sprout_label: Some(sprouted),
            });
            truth.push(GroundTruthRecord {
                potato_id: params.potato_id.clone(),
                day,
                image_path,
                mask_path,
                weight_g,
                weight_loss_pct,
                sprouted,
                sprout_count,
                sprout_length_px: sprout_length,
                shelf_life_day: params.analytic_shelf_life_day(),
                loss_class_by_n: (MIN_CLASSES..=MAX_CLASSES).map(|n| reference_class(weight_loss_pct, n)).collect(),
            });
        }
    }

    let manifest = DatasetManifest { root_dir: out_dir.to_path_buf(), observations };
    write_manifest(&manifest, &out_dir.join("manifest.csv")).map_err(|e| not_writable(&e))?;
    let json = serde_json::to_string_pretty(&truth).expect("ground truth serializes");
    std::fs::write(out_dir.join("ground_truth.json"), json).map_err(|e| not_writable(&e))?;
    Ok((manifest, truth))
}

pub fn read_ground_truth(path: &Path) -> std::io::Result<Vec<GroundTruthRecord>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(std::io::Error::other)
}
