//! Subject-wise k-fold splitting. Folds partition subjects, never epochs.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    /// Epoch indices.
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub val_subjects: Vec<String>,
}

/// Partitions the distinct subjects (shuffled by `seed`) into `k` folds dealt
/// round-robin, so fold sizes differ by at most one and the first folds take
/// the remainder.
pub fn subject_folds(subjects: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k < 2 {
        return Err(Error::config("folds", format!("k must be at least 2, got {k}")));
    }
    let unique: BTreeSet<&String> = subjects.iter().collect();
    if unique.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} subjects cannot fill {k} folds",
            unique.len()
        )));
    }
    let mut order: Vec<String> = unique.into_iter().cloned().collect();
    order.shuffle(&mut seeded(seed));
    let mut folds = alloc::vec![Vec::new(); k];
    for (i, s) in order.into_iter().enumerate() {
        folds[i % k].push(s);
    }
    Ok(folds)
}

/// `epoch_subjects[i]` is the subject of epoch `i`.
pub fn subject_kfold_split(epoch_subjects: &[String], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let folds = subject_folds(epoch_subjects, k, seed)?;
    Ok(folds
        .into_iter()
        .map(|val_subjects| {
            let held: BTreeSet<&String> = val_subjects.iter().collect();
            let (val, train): (Vec<usize>, Vec<usize>) =
                (0..epoch_subjects.len()).partition(|&i| held.contains(&epoch_subjects[i]));
            Fold {
                train,
                val,
                val_subjects,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn ids(subjects: usize, per: usize) -> Vec<String> {
        (0..subjects * per).map(|i| format!("s{}", i / per)).collect()
    }

    #[test]
    fn seven_subjects_three_folds() {
        let f = subject_folds(&ids(7, 1), 3, 0).unwrap();
        let mut sizes: Vec<usize> = f.iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 3]);
    }

    #[test]
    fn leave_one_subject_out() {
        let f = subject_kfold_split(&ids(20, 4), 20, 5).unwrap();
        assert_eq!(f.len(), 20);
        assert!(f.iter().all(|x| x.val_subjects.len() == 1 && x.val.len() == 4 && x.train.len() == 76));
    }

    #[test]
    fn folds_partition_subjects_without_leaks() {
        let e = ids(13, 3);
        let folds = subject_kfold_split(&e, 4, 9).unwrap();
        let mut seen = BTreeSet::new();
        for f in &folds {
            let tr: BTreeSet<&String> = f.train.iter().map(|&i| &e[i]).collect();
            let va: BTreeSet<&String> = f.val.iter().map(|&i| &e[i]).collect();
            assert!(tr.is_disjoint(&va));
            assert_eq!(f.train.len() + f.val.len(), e.len());
            for s in &f.val_subjects {
                assert!(seen.insert(s.clone()), "subject validated twice");
            }
        }
        assert_eq!(seen.len(), 13);
    }

    #[test]
    fn too_few_subjects() {
        assert!(subject_folds(&ids(2, 5), 3, 0).is_err());
        assert!(subject_folds(&ids(5, 1), 1, 0).is_err());
    }
}
