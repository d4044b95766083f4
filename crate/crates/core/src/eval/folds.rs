//! Teacher-disjoint folds stratified over the target range.
//!
//! Teachers are ordered by their mean session target and dealt into folds
//! in serpentine order (0, 1, .., k-1, k-1, .., 0, 0, 1, ..), so each fold
//! receives teachers from both ends of the score range.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dimension, Session};
use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, teacher_id: &str) -> Option<usize> {
        self.assignments.get(teacher_id).copied()
    }

    pub fn teachers_in(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, f)| **f == fold)
            .map(|(t, _)| t.as_str())
            .collect()
    }

    /// Split sessions into (train, test) for `fold`.
    pub fn split<'a>(&self, sessions: &[&'a Session], fold: usize) -> (Vec<&'a Session>, Vec<&'a Session>) {
        sessions
            .iter()
            .partition(|s| self.fold_of(&s.teacher_id) != Some(fold))
    }
}

/// Position `i` of the serpentine deal over `k` folds.
pub fn serpentine(i: usize, k: usize) -> usize {
    let round = i / k;
    let pos = i % k;
    if round % 2 == 0 {
        pos
    } else {
        k - 1 - pos
    }
}

/// Assign teachers (with their mean targets) to `k` folds. Exact ties in
/// the mean are ordered by a seeded shuffle of the id-sorted teacher list.
pub fn make_folds(teacher_means: &BTreeMap<String, f64>, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {k}")));
    }
    if teacher_means.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} teachers cannot fill {k} folds",
            teacher_means.len()
        )));
    }
    // BTreeMap iteration is already id-sorted
    let mut teachers: Vec<(&String, f64)> = teacher_means.iter().map(|(t, m)| (t, *m)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    teachers.shuffle(&mut rng);
    teachers.sort_by(|a, b| a.1.total_cmp(&b.1));
    let assignments = teachers
        .into_iter()
        .enumerate()
        .map(|(i, (t, _))| (t.clone(), serpentine(i, k)))
        .collect();
    Ok(FoldPlan { k, seed, assignments })
}

/// Mean over a teacher's labeled sessions of the per-session mean target.
pub fn teacher_means(sessions: &[&Session], dimension: Dimension) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for s in sessions {
        if let Ok(y) = s.mean_target(dimension) {
            let e = acc.entry(s.teacher_id.clone()).or_insert((0.0, 0));
            e.0 += y;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(t, (sum, n))| (t, sum / n as f64)).collect()
}

pub fn make_folds_for(corpus: &Corpus, dimension: Dimension, k: usize, seed: u64) -> Result<FoldPlan> {
    let (labeled, _) = corpus.labeled(dimension);
    make_folds(&teacher_means(&labeled, dimension), k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn means(values: &[(&str, f64)]) -> BTreeMap<String, f64> {
        values.iter().map(|(t, m)| (t.to_string(), *m)).collect()
    }

    #[test]
    fn serpentine_order() {
        let seq: Vec<usize> = (0..12).map(|i| serpentine(i, 5)).collect();
        assert_eq!(seq, vec![0, 1, 2, 3, 4, 4, 3, 2, 1, 0, 0, 1]);
    }

    #[test]
    fn ten_teachers_two_per_fold_extremes_paired() {
        let m: Vec<(String, f64)> = (1..=10).map(|i| (format!("t{i:02}"), i as f64)).collect();
        let m: BTreeMap<String, f64> = m.into_iter().collect();
        let plan = make_folds(&m, 5, 42).unwrap();
        for f in 0..5 {
            assert_eq!(plan.teachers_in(f).len(), 2);
        }
        assert_eq!(plan.teachers_in(0), vec!["t01", "t10"]);
        assert_eq!(plan.teachers_in(4), vec!["t05", "t06"]);
    }

    #[test]
    fn too_few_teachers() {
        assert!(make_folds(&means(&[("a", 1.0), ("b", 2.0)]), 5, 0).is_err());
    }

    #[test]
    fn ties_follow_seed_but_are_deterministic() {
        let m = means(&[("a", 1.0), ("b", 1.0), ("c", 1.0), ("d", 1.0), ("e", 1.0), ("f", 1.0)]);
        let p1 = make_folds(&m, 3, 9).unwrap();
        assert_eq!(p1, make_folds(&m, 3, 9).unwrap());
        let differs = (0..20).any(|s| make_folds(&m, 3, s).unwrap().assignments != p1.assignments);
        assert!(differs);
    }
}
