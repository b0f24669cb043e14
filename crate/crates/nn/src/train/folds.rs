use std::collections::{BTreeMap, BTreeSet};

use tuber_core::SampleKey;

use super::TrainError;

/// Stratified assignment of samples to `k` folds, numbered `1..=k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<SampleKey, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, key: &SampleKey) -> Option<usize> {
        self.assignments.get(key).copied()
    }

    pub fn fold_keys(&self, fold: usize) -> BTreeSet<SampleKey> {
        self.assignments.iter().filter(|(_, &f)| f == fold).map(|(k, _)| k.clone()).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f - 1] += 1;
        }
        sizes
    }
}

/// Within each class, samples are ordered by a seeded hash of their key and dealt round
/// robin; each class starts where the previous one stopped so fold totals stay balanced.
/// Row order of the input does not matter.
pub fn stratified_kfold(keys: &[SampleKey], labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan, TrainError> {
    if keys.len() != labels.len() {
        return Err(TrainError::InvalidConfig(format!("{} keys but {} labels", keys.len(), labels.len())));
    }
    if k < 2 {
        return Err(TrainError::InvalidConfig(format!("k must be at least 2, got {k}")));
    }
    let mut by_class: BTreeMap<usize, Vec<&SampleKey>> = BTreeMap::new();
    for (key, &label) in keys.iter().zip(labels) {
        by_class.entry(label).or_default().push(key);
    }
    let mut assignments = BTreeMap::new();
    let mut offset = 0;
    for (&class, members) in &mut by_class {
        if members.len() < k {
            return Err(TrainError::ClassTooSmall { class, count: members.len(), required: k });
        }
        members.sort_by_key(|key| (key.stable_hash(seed), (*key).clone()));
        for (i, key) in members.iter().enumerate() {
            if assignments.insert((*key).clone(), (offset + i) % k + 1).is_some() {
                return Err(TrainError::InvalidConfig(format!("duplicate sample key {key}")));
            }
        }
        offset += members.len();
    }
    Ok(FoldPlan { k, seed, assignments })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(n: usize) -> Vec<SampleKey> {
        (0..n).map(|i| SampleKey { potato_id: format!("P{}", i / 40), day: (i % 40) as u32 * 5 }).collect()
    }

    #[test]
    fn balanced_pairs() {
        let labels = [1, 1, 1, 1, 1, 2, 2, 2, 2, 2];
        let ks = keys(10);
        let plan = stratified_kfold(&ks, &labels, 5, 3).unwrap();
        for fold in 1..=5 {
            let mut classes: Vec<usize> = ks.iter().zip(&labels).filter(|(k, _)| plan.fold_of(k) == Some(fold)).map(|(_, &l)| l).collect();
            classes.sort();
            assert_eq!(classes, [1, 2]);
        }
    }

    #[test]
    fn full_sized_split() {
        let labels: Vec<usize> = (0..306).map(|i| if i % 3 == 0 { 1 } else { 2 }).collect();
        let plan = stratified_kfold(&keys(306), &labels, 5, 0).unwrap();
        let mut sizes = plan.fold_sizes();
        sizes.sort();
        assert_eq!(sizes, [61, 61, 61, 61, 62]);
    }

    #[test]
    fn small_class_rejected() {
        let labels = [1, 1, 1, 2, 2, 2, 2, 2, 2];
        assert!(matches!(
            stratified_kfold(&keys(9), &labels, 5, 0),
            Err(TrainError::ClassTooSmall { class: 1, count: 3, required: 5 })
        ));
    }

    #[test]
    fn row_order_does_not_matter() {
        let ks = keys(60);
        let labels: Vec<usize> = (0..60).map(|i| 1 + i % 3).collect();
        let a = stratified_kfold(&ks, &labels, 5, 9).unwrap();
        let (rk, rl): (Vec<_>, Vec<_>) = ks.iter().cloned().zip(labels.iter().copied()).rev().unzip();
        let b = stratified_kfold(&rk, &rl, 5, 9).unwrap();
        assert_eq!(a, b);
    }
}
