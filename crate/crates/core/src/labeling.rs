//! Cumulative weight loss, shelf life and class assignment.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{build_trajectories, DatasetError, DatasetManifest, WeightTrajectory};

/// Cumulative weight loss at which a potato is considered unmarketable.
pub const SHELF_LIFE_THRESHOLD_PCT: f64 = 10.0;
pub const MIN_CLASSES: usize = 2;
pub const MAX_CLASSES: usize = 8;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("initial weight must be positive, got {0}")]
    NonPositiveInitialWeight(f64),
    #[error("unsupported class count {0}; expected {MIN_CLASSES}..={MAX_CLASSES}")]
    UnsupportedClassCount(usize),
    #[error("observation of potato {potato_id} on day {day} has no sprout label")]
    MissingSproutLabel { potato_id: String, day: u32 },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Percentage of the starting weight lost by time t. Negative when `wt > w0`.
pub fn cumulative_weight_loss(w0: f64, wt: f64) -> Result<f64, LabelError> {
    if !(w0 > 0.0) {
        return Err(LabelError::NonPositiveInitialWeight(w0));
    }
    Ok((w0 - wt) / w0 * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShelfLifeEstimate {
    /// Day at which loss first reaches the threshold; `None` when the threshold is never
    /// reached within the observations (censored).
    pub shelf_life_day: Option<f64>,
}

impl ShelfLifeEstimate {
    pub fn censored(&self) -> bool {
        self.shelf_life_day.is_none()
    }
}

/// First day at which cumulative loss reaches `threshold_pct`, linearly interpolated
/// between the two measured days that bracket the crossing.
pub fn estimate_shelf_life(trajectory: &WeightTrajectory, threshold_pct: f64) -> ShelfLifeEstimate {
    let loss = |w: f64| (trajectory.w0 - w) / trajectory.w0 * 100.0;
    let mut prev: Option<(f64, f64)> = None;
    for &(day, w) in &trajectory.points {
        let (t, l) = (f64::from(day), loss(w));
        if l >= threshold_pct {
            let day = match prev {
                Some((t0, l0)) if l > l0 => t0 + (threshold_pct - l0) * (t - t0) / (l - l0),
                _ => t,
            };
            return ShelfLifeEstimate { shelf_life_day: Some(day) };
        }
        prev = Some((t, l));
    }
    ShelfLifeEstimate { shelf_life_day: None }
}

/// Whole days of shelf life left at `current_day`, floored and clamped at zero.
/// `None` for censored estimates.
pub fn remaining_shelf_life(estimate: &ShelfLifeEstimate, current_day: u32) -> Option<u32> {
    estimate
        .shelf_life_day
        .map(|sl| (sl - f64::from(current_day)).floor().max(0.0) as u32)
}

/// Equal division of `[0, threshold)` into `n − 1` bins plus a final `[threshold, ∞)` bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScheme {
    pub n_classes: usize,
    pub threshold_pct: f64,
    /// Upper edges of classes `1..n−1`; the last equals `threshold_pct`.
    pub edges: Vec<f64>,
}

impl ClassScheme {
    /// Half-open loss interval `[lo, hi)` of a 1-based class; the final class has `hi = ∞`.
    pub fn interval(&self, class_index: usize) -> (f64, f64) {
        assert!((1..=self.n_classes).contains(&class_index), "class index {class_index} out of range");
        let lo = if class_index == 1 { 0.0 } else { self.edges[class_index - 2] };
        let hi = self.edges.get(class_index - 1).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }
}

pub fn build_class_scheme(n_classes: usize) -> Result<ClassScheme, LabelError> {
    if !(MIN_CLASSES..=MAX_CLASSES).contains(&n_classes) {
        return Err(LabelError::UnsupportedClassCount(n_classes));
    }
    let bins = (n_classes - 1) as f64;
    let mut edges: Vec<f64> = (1..n_classes).map(|k| SHELF_LIFE_THRESHOLD_PCT * k as f64 / bins).collect();
    // 10·(n−1)/(n−1) is exact in floating point, but pin it anyway
    *edges.last_mut().expect("n_classes >= 2") = SHELF_LIFE_THRESHOLD_PCT;
    Ok(ClassScheme { n_classes, threshold_pct: SHELF_LIFE_THRESHOLD_PCT, edges })
}

/// 1-based class for a loss percentage; negative losses count as zero.
pub fn assign_class(scheme: &ClassScheme, weight_loss_pct: f64) -> usize {
    let v = weight_loss_pct.max(0.0);
    scheme.edges.iter().position(|&edge| v < edge).map_or(scheme.n_classes, |i| i + 1)
}

/// One labeled image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub potato_id: String,
    pub day: u32,
    #[serde(rename = "image_path")]
    pub image_ref: String,
    pub weight_loss_pct: f64,
    /// `None` when the potato's trajectory is censored.
    pub remaining_days: Option<u32>,
    pub class_index: usize,
    pub scheme_n: usize,
}

/// Labels every observation of the manifest.
///
/// In sprout mode the classes are 1 = non-sprouted and 2 = sprouted; otherwise the class
/// comes from the cumulative weight loss under `scheme`.
pub fn label_dataset(
    manifest: &DatasetManifest,
    scheme: &ClassScheme,
    sprout_mode: bool,
) -> Result<Vec<LabeledSample>, LabelError> {
    let trajectories = build_trajectories(manifest)?;
    let by_id: HashMap<&str, (&WeightTrajectory, ShelfLifeEstimate)> = trajectories
        .iter()
        .map(|t| (t.potato_id.as_str(), (t, estimate_shelf_life(t, scheme.threshold_pct))))
        .collect();

    manifest
        .observations
        .iter()
        .map(|obs| {
            let (trajectory, estimate) = by_id[obs.potato_id.as_str()];
            let weight_loss_pct = cumulative_weight_loss(trajectory.w0, obs.weight_g)?;
            let (class_index, scheme_n) = if sprout_mode {
                let sprouted = obs.sprout_label.ok_or_else(|| LabelError::MissingSproutLabel {
                    potato_id: obs.potato_id.clone(),
                    day: obs.day,
                })?;
                (if sprouted { 2 } else { 1 }, 2)
            } else {
                (assign_class(scheme, weight_loss_pct), scheme.n_classes)
            };
            Ok(LabeledSample {
                potato_id: obs.potato_id.clone(),
                day: obs.day,
                image_ref: obs.image_ref.clone(),
                weight_loss_pct,
                remaining_days: remaining_shelf_life(&estimate, obs.day),
                class_index,
                scheme_n,
            })
        })
        .collect()
}

/// Shelf-life training excludes potatoes whose trajectory never reached the threshold.
pub fn exclude_censored(samples: Vec<LabeledSample>) -> Vec<LabeledSample> {
    samples.into_iter().filter(|s| s.remaining_days.is_some()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PotatoObservation;
    use std::path::PathBuf;

    fn traj(points: &[(u32, f64)]) -> WeightTrajectory {
        WeightTrajectory::new("P1", points.to_vec()).unwrap()
    }

    #[test]
    fn weight_loss_examples() {
        assert_eq!(cumulative_weight_loss(100.0, 90.0).unwrap(), 10.0);
        assert_eq!(cumulative_weight_loss(73.2, 73.2).unwrap(), 0.0);
        assert_eq!(cumulative_weight_loss(200.0, 187.5).unwrap(), 6.25);
        assert!(cumulative_weight_loss(100.0, 101.0).unwrap() < 0.0);
        assert!(matches!(cumulative_weight_loss(0.0, 1.0), Err(LabelError::NonPositiveInitialWeight(_))));
    }

    #[test]
    fn shelf_life_interpolates_crossing() {
        let est = estimate_shelf_life(&traj(&[(0, 100.0), (10, 96.0), (20, 89.0)]), 10.0);
        // losses 0/4/11: crossing at 10 + 6·10/7
        let expected = 10.0 + 6.0 * 10.0 / 7.0;
        assert!((est.shelf_life_day.unwrap() - expected).abs() < 1e-12);
        assert_eq!(remaining_shelf_life(&est, 10), Some(8));
    }

    #[test]
    fn shelf_life_exact_boundary_and_censoring() {
        let est = estimate_shelf_life(&traj(&[(0, 100.0), (5, 90.0)]), 10.0);
        assert_eq!(est.shelf_life_day, Some(5.0));
        let est = estimate_shelf_life(&traj(&[(0, 100.0), (50, 95.0), (100, 91.0)]), 10.0);
        assert!(est.censored());
        assert_eq!(remaining_shelf_life(&est, 3), None);
    }

    #[test]
    fn remaining_life_examples() {
        let at = |d: f64| ShelfLifeEstimate { shelf_life_day: Some(d) };
        assert_eq!(remaining_shelf_life(&at(121.0), 121), Some(0));
        assert_eq!(remaining_shelf_life(&at(50.0), 30), Some(20));
        assert_eq!(remaining_shelf_life(&at(50.0), 80), Some(0));
    }

    #[test]
    fn schemes_match_reported_edges() {
        assert_eq!(build_class_scheme(5).unwrap().edges, vec![2.5, 5.0, 7.5, 10.0]);
        assert_eq!(build_class_scheme(2).unwrap().edges, vec![10.0]);
        let s7 = build_class_scheme(7).unwrap();
        for (k, e) in s7.edges.iter().enumerate() {
            assert!((e - 10.0 * (k + 1) as f64 / 6.0).abs() < 1e-12);
        }
        assert!(matches!(build_class_scheme(1), Err(LabelError::UnsupportedClassCount(1))));
        assert!(matches!(build_class_scheme(9), Err(LabelError::UnsupportedClassCount(9))));
    }

    #[test]
    fn class_assignment_examples() {
        assert_eq!(assign_class(&build_class_scheme(5).unwrap(), 6.0), 3);
        assert_eq!(assign_class(&build_class_scheme(3).unwrap(), 0.0), 1);
        assert_eq!(assign_class(&build_class_scheme(4).unwrap(), 10.0), 4);
        assert_eq!(assign_class(&build_class_scheme(4).unwrap(), -0.3), 1);
        assert_eq!(build_class_scheme(3).unwrap().interval(3), (10.0, f64::INFINITY));
    }

    fn manifest(rows: &[(&str, u32, f64, Option<bool>)]) -> DatasetManifest {
        DatasetManifest {
            root_dir: PathBuf::new(),
            observations: rows
                .iter()
                .map(|&(id, day, w, s)| PotatoObservation {
                    potato_id: id.into(),
                    tray_id: "T".into(),
                    day,
                    image_ref: format!("{id}_{day}.png"),
                    weight_g: w,
                    sprout_label: s,
                })
                .collect(),
        }
    }

    #[test]
    fn labels_by_loss_and_sprout() {
        let m = manifest(&[("P1", 0, 100.0, Some(false)), ("P1", 10, 96.0, Some(true)), ("P1", 20, 89.0, Some(true))]);
        let s5 = build_class_scheme(5).unwrap();
        let labels = label_dataset(&m, &s5, false).unwrap();
        assert_eq!(labels[1].class_index, 2);
        assert_eq!(labels[1].remaining_days, Some(8));
        assert_eq!(labels[2].class_index, 5);
        assert_eq!(labels, label_dataset(&m, &s5, false).unwrap());

        let sprout = label_dataset(&m, &s5, true).unwrap();
        assert_eq!(sprout.iter().map(|s| s.class_index).collect::<Vec<_>>(), vec![1, 2, 2]);
        assert!(sprout.iter().all(|s| s.scheme_n == 2));

        let m = manifest(&[("P1", 0, 100.0, None), ("P1", 10, 96.0, Some(true))]);
        assert!(matches!(label_dataset(&m, &s5, true), Err(LabelError::MissingSproutLabel { day: 0, .. })));
    }

    #[test]
    fn labels_json_uses_image_path_key() {
        let s = LabeledSample {
            potato_id: "P".into(),
            day: 1,
            image_ref: "a.png".into(),
            weight_loss_pct: 1.5,
            remaining_days: None,
            class_index: 1,
            scheme_n: 2,
        };
        let v = serde_json::to_value(&s).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["class_index", "day", "image_path", "potato_id", "remaining_days", "scheme_n", "weight_loss_pct"]
        );
        assert!(v["remaining_days"].is_null());
    }
}
