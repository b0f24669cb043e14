use serde::{Deserialize, Serialize};

/// A metric counts as improved only when it beats the best by at least this much.
pub const IMPROVEMENT_EPS: f64 = 1e-8;

fn improves(metric: f64, best: f64) -> bool {
    metric < best - IMPROVEMENT_EPS
}

/// Reduce-on-plateau learning-rate state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    pub lr: f64,
    pub best_metric: f64,
    pub epochs_since_improve: usize,
}

impl PlateauState {
    pub fn new(lr: f64) -> Self {
        Self { lr, best_metric: f64::INFINITY, epochs_since_improve: 0 }
    }
}

/// Multiplies the rate by `factor` once the count of non-improving epochs exceeds `patience`.
pub fn plateau_step(state: PlateauState, metric: f64, factor: f64, patience: usize) -> PlateauState {
    let mut next = state;
    if improves(metric, state.best_metric) {
        next.best_metric = metric;
        next.epochs_since_improve = 0;
    } else {
        next.epochs_since_improve += 1;
        if next.epochs_since_improve > patience {
            next.lr *= factor;
            next.epochs_since_improve = 0;
        }
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub best_metric: f64,
    pub best_epoch: usize,
    pub epochs_since_improve: usize,
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self { best_metric: f64::INFINITY, best_epoch: 0, epochs_since_improve: 0 }
    }
}

/// Returns whether to stop and the updated state. `improved` in the state sense means the
/// caller should keep this epoch's weights.
pub fn early_stop_update(state: EarlyStopState, epoch: usize, metric: f64, patience: usize) -> (bool, EarlyStopState) {
    if improves(metric, state.best_metric) {
        (false, EarlyStopState { best_metric: metric, best_epoch: epoch, epochs_since_improve: 0 })
    } else {
        let next = EarlyStopState { epochs_since_improve: state.epochs_since_improve + 1, ..state };
        (next.epochs_since_improve >= patience, next)
    }
}
