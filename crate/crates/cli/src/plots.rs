//! Small raster charts: training curves, bar charts with error bars and confusion heatmaps.
//!
//! Rendering is pure integer pixel work, so identical inputs give identical PNG bytes.

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{Rgb, RgbImage};
use tuber_core::metrics::ConfusionMatrix;
use tuber_nn::train::EpochRecord;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
pub const BLUE: Rgb<u8> = Rgb([31, 119, 180]);
pub const ORANGE: Rgb<u8> = Rgb([255, 127, 14]);
pub const GRAY: Rgb<u8> = Rgb([150, 150, 150]);

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const LEFT: i64 = 70;
const RIGHT: i64 = 20;
const TOP: i64 = 36;
const BOTTOM: i64 = 56;

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn fill_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
    for y in y0.min(y1)..=y0.max(y1) {
        for x in x0.min(x1)..=x0.max(x1) {
            put(img, x, y, c);
        }
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>, thick: i64) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        fill_rect(img, x - thick / 2, y - thick / 2, x + (thick - 1) / 2, y + (thick - 1) / 2, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

pub fn text_width(s: &str, scale: i64) -> i64 {
    s.chars().count() as i64 * 8 * scale
}

pub fn text(img: &mut RgbImage, x: i64, y: i64, s: &str, c: Rgb<u8>, scale: i64) {
    for (i, ch) in s.chars().enumerate() {
        let glyph = BASIC_FONTS.get(ch).or_else(|| BASIC_FONTS.get('?')).unwrap_or([0; 8]);
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits >> col & 1 == 1 {
                    let px = x + (i as i64 * 8 + col) * scale;
                    let py = y + row as i64 * scale;
                    fill_rect(img, px, py, px + scale - 1, py + scale - 1, c);
                }
            }
        }
    }
}

fn text_centered(img: &mut RgbImage, cx: i64, y: i64, s: &str, c: Rgb<u8>, scale: i64) {
    text(img, cx - text_width(s, scale) / 2, y, s, c, scale);
}

/// Round tick positions covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= target as f64).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64, ticks: &[f64]) -> String {
    let step = if ticks.len() > 1 { ticks[1] - ticks[0] } else { 1.0 };
    let digits = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    format!("{v:.digits$}")
}

/// Pixel mapping of a plot area.
struct Frame {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> i64 {
        let t = (x - self.xr.0) / (self.xr.1 - self.xr.0).max(1e-12);
        self.x0 + (t * (self.x1 - self.x0) as f64).round() as i64
    }

    fn py(&self, y: f64) -> i64 {
        let t = (y - self.yr.0) / (self.yr.1 - self.yr.0).max(1e-12);
        self.y1 - (t * (self.y1 - self.y0) as f64).round() as i64
    }
}

fn axes(img: &mut RgbImage, f: &Frame, title: &str, x_label: &str, y_label: &str, x_ticks: Option<&[f64]>) {
    let y_ticks = nice_ticks(f.yr.0, f.yr.1, 5);
    for &t in &y_ticks {
        let y = f.py(t);
        line(img, (f.x0, y), (f.x1, y), GRID, 1);
        let s = tick_label(t, &y_ticks);
        text(img, f.x0 - 6 - text_width(&s, 1), y - 4, &s, BLACK, 1);
    }
    if let Some(xt) = x_ticks {
        for &t in xt {
            let x = f.px(t);
            line(img, (x, f.y1), (x, f.y1 + 4), BLACK, 1);
            text_centered(img, x, f.y1 + 8, &tick_label(t, xt), BLACK, 1);
        }
    }
    line(img, (f.x0, f.y0), (f.x0, f.y1), BLACK, 1);
    line(img, (f.x0, f.y1), (f.x1, f.y1), BLACK, 1);
    text_centered(img, (f.x0 + f.x1) / 2, 10, title, BLACK, 2);
    text_centered(img, (f.x0 + f.x1) / 2, f.y1 + 24, x_label, BLACK, 1);
    text(img, 4, f.y0 - 14, y_label, BLACK, 1);
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: Rgb<u8>,
}

/// Line chart; the y range is padded from the data unless given.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], y_range: Option<(f64, f64)>) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, WHITE);
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all.filter(|p| p.0.is_finite() && p.1.is_finite()) {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if xmin > xmax {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    if xmax == xmin {
        xmax = xmin + 1.0;
    }
    let yr = y_range.unwrap_or_else(|| {
        let pad = ((ymax - ymin) * 0.05).max(1e-3);
        (ymin - pad, ymax + pad)
    });
    let f = Frame {
        x0: LEFT,
        y0: TOP,
        x1: WIDTH as i64 - RIGHT,
        y1: HEIGHT as i64 - BOTTOM,
        xr: (xmin, xmax),
        yr,
    };
    let mut xt = nice_ticks(xmin, xmax, 8);
    if series.iter().flat_map(|s| &s.points).all(|p| p.0.fract() == 0.0) {
        xt.retain(|t| t.fract() == 0.0);
    }
    axes(&mut img, &f, title, x_label, y_label, Some(&xt));
    for s in series {
        let pts: Vec<(i64, i64)> = s.points.iter().filter(|p| p.1.is_finite()).map(|&(x, y)| (f.px(x), f.py(y.clamp(yr.0, yr.1)))).collect();
        for w in pts.windows(2) {
            line(&mut img, w[0], w[1], s.color, 2);
        }
        if let [p] = pts.as_slice() {
            fill_rect(&mut img, p.0 - 2, p.1 - 2, p.0 + 2, p.1 + 2, s.color);
        }
    }
    let mut ly = f.y0 + 6;
    for s in series {
        let lx = f.x1 - 10 - text_width(&s.label, 1) - 20;
        line(&mut img, (lx, ly + 3), (lx + 14, ly + 3), s.color, 2);
        text(&mut img, lx + 20, ly, &s.label, BLACK, 1);
        ly += 14;
    }
    img
}

fn hstack(left: &RgbImage, right: &RgbImage) -> RgbImage {
    let mut out = RgbImage::from_pixel(left.width() + right.width(), left.height().max(right.height()), WHITE);
    image::imageops::replace(&mut out, left, 0, 0);
    image::imageops::replace(&mut out, right, left.width() as i64, 0);
    out
}

/// Loss and accuracy curves of one fold, side by side.
pub fn history_plot(fold: usize, records: &[EpochRecord]) -> RgbImage {
    let pick = |f: fn(&EpochRecord) -> f64| records.iter().map(|r| (r.epoch as f64, f(r))).collect::<Vec<_>>();
    let loss = line_chart(
        &format!("Fold {fold} loss"),
        "epoch",
        "loss",
        &[
            Series { label: "train".into(), points: pick(|r| r.train_loss), color: BLUE },
            Series { label: "validation".into(), points: pick(|r| r.val_loss), color: ORANGE },
        ],
        None,
    );
    let acc = line_chart(
        &format!("Fold {fold} accuracy"),
        "epoch",
        "accuracy",
        &[
            Series { label: "train".into(), points: pick(|r| r.train_acc), color: BLUE },
            Series { label: "validation".into(), points: pick(|r| r.val_acc), color: ORANGE },
        ],
        Some((0.0, 1.0)),
    );
    hstack(&loss, &acc)
}

pub struct Bar {
    pub label: String,
    pub mean: f64,
    pub std: f64,
}

/// Bars with ±std error bars. Labels that do not fit under their bar are numbered and
/// listed below the chart.
pub fn bar_chart(title: &str, y_label: &str, bars: &[Bar], y_range: (f64, f64)) -> RgbImage {
    let n = bars.len().max(1) as i64;
    let plot_w = WIDTH as i64 - LEFT - RIGHT;
    let slot = plot_w / n;
    let numbered = bars.iter().any(|b| text_width(&b.label, 1) > slot - 4);
    let legend_h = if numbered { 14 * bars.len() as u32 + 8 } else { 0 };
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT + legend_h, WHITE);
    let f = Frame {
        x0: LEFT,
        y0: TOP,
        x1: WIDTH as i64 - RIGHT,
        y1: HEIGHT as i64 - BOTTOM,
        xr: (0.0, n as f64),
        yr: y_range,
    };
    axes(&mut img, &f, title, "", y_label, None);
    for (i, b) in bars.iter().enumerate() {
        let cx = f.x0 + slot * i as i64 + slot / 2;
        let half = (slot * 3 / 10).max(2);
        let clamp = |v: f64| v.clamp(y_range.0, y_range.1);
        fill_rect(&mut img, cx - half, f.py(clamp(b.mean)), cx + half, f.y1 - 1, BLUE);
        let (lo, hi) = (f.py(clamp(b.mean - b.std)), f.py(clamp(b.mean + b.std)));
        line(&mut img, (cx, lo), (cx, hi), BLACK, 1);
        line(&mut img, (cx - 5, lo), (cx + 5, lo), BLACK, 1);
        line(&mut img, (cx - 5, hi), (cx + 5, hi), BLACK, 1);
        let value = format!("{:.3}", b.mean);
        text_centered(&mut img, cx, (hi - 12).max(f.y0), &value, BLACK, 1);
        let name = if numbered { format!("{}", i + 1) } else { b.label.clone() };
        text_centered(&mut img, cx, f.y1 + 8, &name, BLACK, 1);
    }
    if numbered {
        for (i, b) in bars.iter().enumerate() {
            text(&mut img, LEFT, HEIGHT as i64 + 14 * i as i64, &format!("{}: {}", i + 1, b.label), BLACK, 1);
        }
    }
    img
}

fn shade(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    Rgb([mix(247.0, 8.0), mix(251.0, 48.0), mix(255.0, 107.0)])
}

/// Count heatmap, rows = true class, columns = predicted class.
pub fn confusion_heatmap(title: &str, m: &ConfusionMatrix) -> RgbImage {
    let n = m.n.max(1) as i64;
    let cell = (360 / n).clamp(24, 120);
    let (left, top) = (80i64, 50i64);
    let w = (left + cell * n + 30) as u32;
    let h = (top + cell * n + 50) as u32;
    let mut img = RgbImage::from_pixel(w.max(320), h, WHITE);
    let max = m.counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let cx = img.width() as i64 / 2;
    text_centered(&mut img, cx, 10, title, BLACK, 2);
    for t in 0..m.n {
        for p in 0..m.n {
            let v = m.counts[t][p];
            let (x, y) = (left + p as i64 * cell, top + t as i64 * cell);
            let t_frac = v as f64 / max;
            fill_rect(&mut img, x, y, x + cell - 1, y + cell - 1, shade(t_frac));
            let ink = if t_frac > 0.5 { WHITE } else { BLACK };
            text_centered(&mut img, x + cell / 2, y + cell / 2 - 4, &v.to_string(), ink, 1);
        }
        let label = format!("{}", t + 1);
        text(&mut img, left - 12 - text_width(&label, 1), top + t as i64 * cell + cell / 2 - 4, &label, BLACK, 1);
        text_centered(&mut img, left + t as i64 * cell + cell / 2, top + n * cell + 6, &label, BLACK, 1);
    }
    for i in 0..=n {
        line(&mut img, (left + i * cell, top), (left + i * cell, top + n * cell), GRAY, 1);
        line(&mut img, (left, top + i * cell), (left + n * cell, top + i * cell), GRAY, 1);
    }
    text_centered(&mut img, left + n * cell / 2, top + n * cell + 22, "predicted class", BLACK, 1);
    text(&mut img, 4, top - 16, "true class", BLACK, 1);
    img
}
