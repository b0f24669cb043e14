//! Confusion matrices and the classification metrics derived from them.
//!
//! Class labels are 1-based throughout. For two-class problems class 2 is the positive
//! class (sprouted), so `TN = m[1][1]`, `FP = m[1][2]`, `FN = m[2][1]`, `TP = m[2][2]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("label {label} outside 1..={n}")]
    LabelOutOfRange { label: usize, n: usize },
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("expected a 2x2 matrix, got {0}x{0}")]
    NotBinary(usize),
    #[error("no fold reports to aggregate")]
    NoReports,
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, counts: vec![vec![0; n]; n] }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// A matrix with no samples carries no information.
    pub fn is_degenerate(&self) -> bool {
        self.total() == 0
    }

    /// Count for 1-based (true, predicted) classes.
    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth - 1][predicted - 1]
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.get(class, class)
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        (1..=self.n).filter(|&t| t != class).map(|t| self.get(t, class)).sum()
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        (1..=self.n).filter(|&p| p != class).map(|p| self.get(class, p)).sum()
    }

    pub fn true_negatives(&self, class: usize) -> u64 {
        self.total() - self.true_positives(class) - self.false_positives(class) - self.false_negatives(class)
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class - 1].iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (1..=self.n).map(|c| self.get(c, c)).sum()
    }

    /// CSV with a header row of predicted-class labels and one row per true class.
    pub fn to_csv(&self) -> String {
        let header: Vec<String> = (1..=self.n).map(|c| format!("pred_{c}")).collect();
        let mut out = header.join(",");
        out.push('\n');
        for row in &self.counts {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let n = lines.next().ok_or("empty confusion csv")?.split(',').count();
        let counts = lines
            .map(|l| l.split(',').map(|c| c.trim().parse::<u64>().map_err(|e| e.to_string())).collect())
            .collect::<Result<Vec<Vec<u64>>, String>>()?;
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(format!("confusion csv is not {n}x{n}"));
        }
        Ok(Self { n, counts })
    }
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], n: usize) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch { truth: truth.len(), predicted: predicted.len() });
    }
    let mut m = ConfusionMatrix::zeros(n);
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if !(1..=n).contains(&label) {
                return Err(MetricsError::LabelOutOfRange { label, n });
            }
        }
        m.counts[t - 1][p - 1] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryDiagnostics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub balanced_accuracy: f64,
    pub mcc: f64,
    /// Set when some MCC denominator factor was zero and 0 was substituted.
    pub mcc_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_classes: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    /// Support-weighted averages; the headline numbers.
    pub weighted_avg: Averages,
    pub binary: Option<BinaryDiagnostics>,
    /// Names of metrics whose denominator was zero (reported as 0).
    pub degenerate: Vec<String>,
}

impl MetricsReport {
    /// Flat name → value view used for fold aggregation.
    pub fn scalars(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        out.insert("accuracy".to_string(), self.accuracy);
        out.insert("precision_weighted".to_string(), self.weighted_avg.precision);
        out.insert("recall_weighted".to_string(), self.weighted_avg.recall);
        out.insert("f1_weighted".to_string(), self.weighted_avg.f1);
        out.insert("precision_macro".to_string(), self.macro_avg.precision);
        out.insert("recall_macro".to_string(), self.macro_avg.recall);
        out.insert("f1_macro".to_string(), self.macro_avg.f1);
        if let Some(b) = &self.binary {
            out.insert("balanced_accuracy".to_string(), b.balanced_accuracy);
            out.insert("specificity".to_string(), b.specificity);
            out.insert("mcc".to_string(), b.mcc);
        }
        out
    }
}

fn ratio(num: u64, den: u64, name: String, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(name);
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// One-vs-rest precision/recall/F1 per class, macro and support-weighted averages, and
/// binary diagnostics for two-class matrices.
pub fn metrics_from_confusion(m: &ConfusionMatrix) -> Result<MetricsReport, MetricsError> {
    let total = m.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let mut degenerate = Vec::new();
    let per_class: Vec<ClassMetrics> = (1..=m.n)
        .map(|c| {
            let tp = m.true_positives(c);
            let precision = ratio(tp, tp + m.false_positives(c), format!("precision_{c}"), &mut degenerate);
            let recall = ratio(tp, tp + m.false_negatives(c), format!("recall_{c}"), &mut degenerate);
            ClassMetrics { precision, recall, f1: harmonic(precision, recall), support: m.support(c) }
        })
        .collect();

    let k = m.n as f64;
    let macro_avg = Averages {
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / k,
    };
    let weight = |c: &ClassMetrics| c.support as f64 / total as f64;
    let weighted_avg = Averages {
        precision: per_class.iter().map(|c| weight(c) * c.precision).sum(),
        // Σ support_c/N · TP_c/support_c collapses to the accuracy; compute it that way so
        // the identity holds exactly rather than up to rounding
        recall: m.correct() as f64 / total as f64,
        f1: per_class.iter().map(|c| weight(c) * c.f1).sum(),
    };
    let binary = if m.n == 2 { Some(binary_diagnostics(m)?) } else { None };
    if let Some(b) = &binary {
        if b.mcc_degenerate {
            degenerate.push("mcc".to_string());
        }
    }
    Ok(MetricsReport {
        n_classes: m.n,
        accuracy: m.correct() as f64 / total as f64,
        per_class,
        macro_avg,
        weighted_avg,
        binary,
        degenerate,
    })
}

pub fn binary_diagnostics(m: &ConfusionMatrix) -> Result<BinaryDiagnostics, MetricsError> {
    if m.n != 2 {
        return Err(MetricsError::NotBinary(m.n));
    }
    let (tn, fp, fn_, tp) = (m.get(1, 1) as f64, m.get(1, 2) as f64, m.get(2, 1) as f64, m.get(2, 2) as f64);
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let sensitivity = div(tp, tp + fn_);
    let specificity = div(tn, tn + fp);
    let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    let mcc_degenerate = factors.iter().any(|&f| f == 0.0);
    let mcc = if mcc_degenerate {
        0.0
    } else {
        (tp * tn - fp * fn_) / factors.iter().product::<f64>().sqrt()
    };
    Ok(BinaryDiagnostics {
        sensitivity,
        specificity,
        balanced_accuracy: (sensitivity + specificity) / 2.0,
        mcc,
        mcc_degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (denominator k − 1) of each metric across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: usize,
    pub metrics: BTreeMap<String, MeanStd>,
    /// A single fold has no spread; std is reported as 0.
    pub single_fold: bool,
}

impl CvSummary {
    pub fn accuracy(&self) -> MeanStd {
        self.metrics["accuracy"]
    }
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

pub fn aggregate_folds(reports: &[MetricsReport]) -> Result<CvSummary, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::NoReports);
    }
    let scalars: Vec<BTreeMap<String, f64>> = reports.iter().map(MetricsReport::scalars).collect();
    let metrics = scalars[0]
        .keys()
        .filter(|name| scalars.iter().all(|s| s.contains_key(*name)))
        .map(|name| {
            let values: Vec<f64> = scalars.iter().map(|s| s[name]).collect();
            (name.clone(), mean_std(&values))
        })
        .collect();
    Ok(CvSummary { folds: reports.len(), metrics, single_fold: reports.len() == 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sprout_fold() -> ConfusionMatrix {
        ConfusionMatrix { n: 2, counts: vec![vec![18, 0], vec![1, 42]] }
    }

    #[test]
    fn builds_sprout_matrix_from_labels() {
        let mut truth = vec![1; 18];
        truth.extend([2; 43]);
        let mut pred = vec![1; 19];
        pred.extend([2; 42]);
        let m = confusion_matrix(&truth, &pred, 2).unwrap();
        assert_eq!(m, sprout_fold());
        assert_eq!((m.true_negatives(2), m.false_positives(2), m.false_negatives(2), m.true_positives(2)), (18, 0, 1, 42));
    }

    #[test]
    fn confusion_errors_and_degenerate() {
        assert_eq!(confusion_matrix(&[1], &[1, 2], 2), Err(MetricsError::LengthMismatch { truth: 1, predicted: 2 }));
        assert_eq!(confusion_matrix(&[3], &[1], 2), Err(MetricsError::LabelOutOfRange { label: 3, n: 2 }));
        let empty = confusion_matrix(&[], &[], 3).unwrap();
        assert!(empty.is_degenerate());
        assert_eq!(metrics_from_confusion(&empty), Err(MetricsError::EmptyMatrix));
        let diag = confusion_matrix(&[1, 2, 3], &[1, 2, 3], 3).unwrap();
        assert_eq!(diag.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
    }

    #[test]
    fn sprout_fold_metrics() {
        let r = metrics_from_confusion(&sprout_fold()).unwrap();
        assert!((r.accuracy - 60.0 / 61.0).abs() < 1e-12);
        assert_eq!(r.per_class[1].precision, 1.0);
        assert!((r.per_class[1].recall - 42.0 / 43.0).abs() < 1e-12);
        assert!((r.per_class[0].precision - 18.0 / 19.0).abs() < 1e-12);
        let b = r.binary.unwrap();
        assert!((b.balanced_accuracy - (1.0 + 42.0 / 43.0) / 2.0).abs() < 1e-12);
        let mcc = 756.0 / (42.0f64 * 43.0 * 18.0 * 19.0).sqrt();
        assert!((b.mcc - mcc).abs() < 1e-12);
        assert!((b.mcc - 0.9620).abs() < 5e-4);
    }

    #[test]
    fn perfect_and_single_column_binary() {
        let b = binary_diagnostics(&ConfusionMatrix { n: 2, counts: vec![vec![5, 0], vec![0, 7]] }).unwrap();
        assert_eq!((b.mcc, b.balanced_accuracy), (1.0, 1.0));
        let b = binary_diagnostics(&ConfusionMatrix { n: 2, counts: vec![vec![0, 5], vec![0, 7]] }).unwrap();
        assert_eq!(b.mcc, 0.0);
        assert!(b.mcc_degenerate);
        assert_eq!(binary_diagnostics(&ConfusionMatrix::zeros(3)), Err(MetricsError::NotBinary(3)));
    }

    #[test]
    fn zero_division_is_flagged() {
        let m = ConfusionMatrix { n: 3, counts: vec![vec![2, 0, 0], vec![1, 0, 0], vec![0, 0, 3]] };
        let r = metrics_from_confusion(&m).unwrap();
        assert_eq!(r.per_class[1].precision, 0.0);
        assert!(r.degenerate.contains(&"precision_2".to_string()));
    }

    #[test]
    fn fold_aggregation() {
        let reports: Vec<MetricsReport> = [0.98, 0.99, 0.97, 0.98, 0.985]
            .iter()
            .map(|&a| {
                let mut r = metrics_from_confusion(&sprout_fold()).unwrap();
                r.accuracy = a;
                r
            })
            .collect();
        let s = aggregate_folds(&reports).unwrap();
        let acc = s.accuracy();
        // Σ = 4.905, deviations (−1, 9, −11, −1, 4)·1e-3, Σd² = 220e-6
        assert!((acc.mean - 0.981).abs() < 1e-12);
        assert!((acc.std - (220e-6f64 / 4.0).sqrt()).abs() < 1e-12);
        assert!((acc.std - 0.0074).abs() < 1e-4);

        let same = aggregate_folds(&vec![reports[0].clone(); 3]).unwrap();
        assert_eq!(same.accuracy().std, 0.0);
        let one = aggregate_folds(&reports[..1]).unwrap();
        assert!(one.single_fold);
        assert_eq!(one.accuracy().std, 0.0);
        assert_eq!(aggregate_folds(&[]), Err(MetricsError::NoReports));
    }

    #[test]
    fn csv_round_trip() {
        let m = sprout_fold();
        let text = m.to_csv();
        assert_eq!(text, "pred_1,pred_2\n18,0\n1,42\n");
        assert_eq!(ConfusionMatrix::from_csv(&text).unwrap(), m);
    }
}
