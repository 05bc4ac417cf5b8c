//! Subject-disjoint k-fold assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subject → fold index; every scan of a subject shares its fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, subject_id: &str) -> Option<usize> {
        self.assignment.get(subject_id).copied()
    }

    pub fn subjects_in(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Deterministic shuffle by seed, then round-robin assignment. Fold
/// subject-counts differ by at most one.
pub fn make_folds(subject_ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    let mut unique: Vec<String> = subject_ids.to_vec();
    unique.sort();
    unique.dedup();
    if k == 0 || unique.len() < k {
        return Err(Error::TooFewSubjects { k, subjects: unique.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    unique.shuffle(&mut rng);
    let assignment =
        unique.into_iter().enumerate().map(|(i, s)| (s, i % k)).collect();
    Ok(FoldPlan { k, seed, assignment })
}

#[cfg(test)]
mod tests {
    use rand::prelude::*;

    use super::*;

    fn subjects(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("sub{i:03}")).collect()
    }

    #[test]
    fn sixty_three_subjects_five_folds() {
        let plan = make_folds(&subjects(63), 5, 7).unwrap();
        let mut sizes = plan.fold_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![12, 12, 13, 13, 13]);
    }

    #[test]
    fn same_seed_same_plan() {
        let a = make_folds(&subjects(20), 4, 11).unwrap();
        let b = make_folds(&subjects(20), 4, 11).unwrap();
        assert_eq!(a, b);
        let c = make_folds(&subjects(20), 4, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_subjects_rejected() {
        assert!(matches!(
            make_folds(&subjects(3), 5, 0),
            Err(Error::TooFewSubjects { k: 5, subjects: 3 })
        ));
    }

    #[test]
    fn thousand_random_plans_are_disjoint_and_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for trial in 0..1000 {
            let n = rng.random_range(2..40usize);
            let k = rng.random_range(1..=n);
            let plan = make_folds(&subjects(n), k, trial).unwrap();
            // Every subject appears exactly once.
            assert_eq!(plan.assignment.len(), n);
            assert!(plan.assignment.values().all(|&f| f < k));
            let sizes = plan.fold_sizes();
            let (min, max) =
                (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(max - min <= 1, "trial {trial}: sizes {sizes:?}");
        }
    }
}
