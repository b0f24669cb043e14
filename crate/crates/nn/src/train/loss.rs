use ndarray::{Array2, Axis};

use super::TrainError;

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn targets(k: usize, true_class: usize, eps: f64) -> Vec<f64> {
    let off = eps / k as f64;
    (0..k).map(|j| if j == true_class { 1.0 - eps + off } else { off }).collect()
}

fn check(k: usize, true_class: usize, eps: f64) -> Result<(), TrainError> {
    if k < 2 || true_class >= k {
        return Err(TrainError::InvalidClassIndex { index: true_class, n_classes: k });
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(TrainError::InvalidConfig(format!("label smoothing {eps} outside [0, 1)")));
    }
    Ok(())
}

/// Cross-entropy against the smoothed target `q(true) = 1 − ε + ε/K`, `q(other) = ε/K`.
/// `true_class` is 0-based.
pub fn smoothed_cross_entropy(logits: &[f64], true_class: usize, eps: f64) -> Result<f64, TrainError> {
    check(logits.len(), true_class, eps)?;
    let ls = log_softmax(logits);
    Ok(-targets(logits.len(), true_class, eps).iter().zip(&ls).map(|(q, l)| q * l).sum::<f64>())
}

/// Gradient of [`smoothed_cross_entropy`] with respect to the logits: `softmax − q`.
pub fn smoothed_cross_entropy_grad(logits: &[f64], true_class: usize, eps: f64) -> Result<Vec<f64>, TrainError> {
    check(logits.len(), true_class, eps)?;
    let ls = log_softmax(logits);
    Ok(ls.iter().zip(targets(logits.len(), true_class, eps)).map(|(l, q)| l.exp() - q).collect())
}

/// Mean loss over a batch of `(N, K)` logits, its gradient (already divided by N) and the
/// number of argmax hits. Labels are 0-based.
pub fn batch_loss(logits: &Array2<f32>, labels: &[usize], eps: f64) -> Result<(f64, Array2<f32>, usize), TrainError> {
    let n = logits.nrows();
    let mut grad = Array2::<f32>::zeros(logits.raw_dim());
    let mut total = 0.0;
    let mut hits = 0;
    for ((row, mut g), &y) in logits.axis_iter(Axis(0)).zip(grad.axis_iter_mut(Axis(0))).zip(labels) {
        let z: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        total += smoothed_cross_entropy(&z, y, eps)?;
        for (gi, d) in g.iter_mut().zip(smoothed_cross_entropy_grad(&z, y, eps)?) {
            *gi = (d / n as f64) as f32;
        }
        if argmax(&z) == y {
            hits += 1;
        }
    }
    Ok((total / n.max(1) as f64, grad, hits))
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
