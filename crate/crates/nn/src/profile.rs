//! Parameter counts, multiply–accumulate cost and inference latency per backbone.
//!
//! Costs are reported in GMacs (10⁹ multiply–accumulates); FLOPs are roughly twice that.

use std::time::Instant;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::param::Tensor;
use crate::zoo::{build_classifier, count_trainable_parameters, BackboneId, FreezePolicy, HeadConfig, ModelHandle, ModelSpec, ZooError};

/// Published reference figures: (parameters, GMacs, training min/fold, inference s/image).
pub fn reference_figures(backbone: BackboneId) -> Option<(f64, f64, f64, f64)> {
    match backbone {
        BackboneId::Densenet121 => Some((6.96e6, 2.9, 15.72, 0.01219)),
        BackboneId::Resnet50 => Some((23.52e6, 4.13, 13.16, 0.00486)),
        BackboneId::Vgg16 => Some((14.89e6, 15.4, 16.95, 0.00191)),
        BackboneId::VitB16 => Some((86.6e6, 17.61, 19.45, 0.00422)),
        BackboneId::TinyCnn | BackboneId::TinyVit => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacCount {
    pub gmacs: f64,
    /// Layer kinds without a counting rule; they contributed nothing.
    pub unsupported: Vec<String>,
}

/// Analytic multiply–accumulates for one forward pass at batch size 1.
pub fn count_macs(handle: &ModelHandle, input_shape: &[usize]) -> MacCount {
    let mut shape = input_shape.to_vec();
    if shape.len() == 3 {
        shape.insert(0, 1);
    }
    shape[0] = 1;
    let (_, cost) = handle.net.trace(&shape);
    let mut unsupported = cost.unsupported;
    unsupported.sort();
    unsupported.dedup();
    MacCount { gmacs: cost.macs as f64 / 1e9, unsupported }
}

/// Median seconds per single-image forward pass after `n_warmup` discarded runs.
pub fn measure_inference_latency(handle: &ModelHandle, n_warmup: usize, n_timed: usize) -> f64 {
    let s = handle.spec.input_size;
    let x = Tensor::from_elem(IxDyn(&[1, 3, s, s]), 0.1);
    for _ in 0..n_warmup {
        std::hint::black_box(handle.net.infer(x.clone()));
    }
    let mut times: Vec<f64> = (0..n_timed.max(1))
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(handle.net.infer(x.clone()));
            start.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let n = times.len();
    if n % 2 == 1 {
        times[n / 2]
    } else {
        (times[n / 2 - 1] + times[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub backbone: BackboneId,
    pub params: usize,
    pub gmacs: f64,
    pub train_min_per_fold: Option<f64>,
    pub infer_sec_per_image: Option<f64>,
    pub published_params: Option<f64>,
    pub published_gmacs: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ProfileConfig {
    pub input_size: usize,
    pub n_warmup: usize,
    /// 0 skips latency measurement.
    pub n_timed: usize,
    /// Measured training minutes per fold, when a run supplied them.
    pub train_minutes: Vec<(BackboneId, f64)>,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self { input_size: 224, n_warmup: 10, n_timed: 100, train_minutes: Vec::new() }
    }
}

/// The profiled network: the whole backbone trainable, global pooling straight into a
/// 2-way classifier.
pub fn profile_spec(backbone: BackboneId, input_size: usize) -> ModelSpec {
    let mut spec = ModelSpec::new(backbone, HeadConfig::with_widths(&[], 2));
    spec.pretrained = false;
    spec.freeze = FreezePolicy::Full;
    spec.input_size = input_size;
    spec
}

pub fn profile_backbone(backbone: BackboneId, config: &ProfileConfig) -> Result<ProfileRow, ZooError> {
    let handle = build_classifier(&profile_spec(backbone, config.input_size), 0)?;
    let macs = count_macs(&handle, &[1, 3, config.input_size, config.input_size]);
    let latency = (config.n_timed > 0).then(|| measure_inference_latency(&handle, config.n_warmup, config.n_timed));
    let reference = reference_figures(backbone);
    Ok(ProfileRow {
        backbone,
        params: count_trainable_parameters(&handle),
        gmacs: macs.gmacs,
        train_min_per_fold: config.train_minutes.iter().find(|(b, _)| *b == backbone).map(|(_, m)| *m),
        infer_sec_per_image: latency,
        published_params: reference.map(|r| r.0),
        published_gmacs: reference.map(|r| r.1),
    })
}

pub fn build_profile_table(backbones: &[BackboneId], config: &ProfileConfig) -> Result<Vec<ProfileRow>, ZooError> {
    backbones.iter().map(|&b| profile_backbone(b, config)).collect()
}

pub const PROFILE_CSV_HEADER: &str = "backbone,params,gmacs,train_min_per_fold,infer_sec_per_image,published_params,published_gmacs";

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|v| format!("{v:.digits$}")).unwrap_or_default()
}

pub fn profile_to_csv(rows: &[ProfileRow]) -> String {
    let mut out = format!("{PROFILE_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.4},{},{},{},{}\n",
            r.backbone,
            r.params,
            r.gmacs,
            opt(r.train_min_per_fold, 3),
            opt(r.infer_sec_per_image, 6),
            opt(r.published_params, 0),
            opt(r.published_gmacs, 2),
        ));
    }
    out
}

#[derive(Debug, thiserror::Error)]
#[error("malformed profile CSV line {line}: {detail}")]
pub struct ProfileParseError {
    pub line: usize,
    pub detail: String,
}

pub fn profile_from_csv(text: &str) -> Result<Vec<ProfileRow>, ProfileParseError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == PROFILE_CSV_HEADER => {}
        _ => return Err(ProfileParseError { line: 1, detail: "unexpected header".into() }),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let err = |detail: String| ProfileParseError { line: i + 1, detail };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(err(format!("expected 7 fields, got {}", f.len())));
            }
            let num = |s: &str| -> Result<Option<f64>, ProfileParseError> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|e| err(format!("{s}: {e}")))
                }
            };
            Ok(ProfileRow {
                backbone: f[0].parse().map_err(|e: ZooError| err(e.to_string()))?,
                params: f[1].parse().map_err(|e| err(format!("{}: {e}", f[1])))?,
                gmacs: num(f[2])?.ok_or_else(|| err("missing gmacs".into()))?,
                train_min_per_fold: num(f[3])?,
                infer_sec_per_image: num(f[4])?,
                published_params: num(f[5])?,
                published_gmacs: num(f[6])?,
            })
        })
        .collect()
}

/// Markdown table with measured and published values in separate columns.
pub fn profile_to_markdown(rows: &[ProfileRow]) -> String {
    let mut out = String::from(
        "| Backbone | Params (M) | GMacs | Train (min/fold) | Inference (s/image) | Published params (M) | Published GMacs | Published train (min/fold) | Published inference (s/image) |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let reference = reference_figures(r.backbone);
        out.push_str(&format!(
            "| {} | {:.2} | {:.3} | {} | {} | {} | {} | {} | {} |\n",
            r.backbone,
            r.params as f64 / 1e6,
            r.gmacs,
            opt(r.train_min_per_fold, 2),
            opt(r.infer_sec_per_image, 5),
            opt(r.published_params.map(|p| p / 1e6), 2),
            opt(r.published_gmacs, 2),
            opt(reference.map(|r| r.2), 2),
            opt(reference.map(|r| r.3), 5),
        ));
    }
    out
}
