//! Confusion matrix and the scores derived from it: accuracy, balanced
//! accuracy, macro-F1 and Cohen's kappa.
//!
//! Rows are the actual class, columns the predicted class.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    /// `counts[actual][predicted]`
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn new(truth: &[usize], pred: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::shape(
                "confusion_matrix",
                "length",
                format!("{} truths vs {} predictions", truth.len(), pred.len()),
            ));
        }
        let mut counts = vec![vec![0u64; classes]; classes];
        for (&a, &p) in truth.iter().zip(pred) {
            if a >= classes || p >= classes {
                return Err(Error::InvalidArgument(format!(
                    "label pair ({a}, {p}) outside 0..{classes}"
                )));
            }
            counts[a][p] += 1;
        }
        Ok(Self {
            classes,
            counts,
            total: truth.len() as u64,
        })
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    /// Row sum: how many samples actually belong to `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    /// Column sum: how many samples were predicted as `c`.
    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.counts[c][c]).sum()
    }

    /// Per-class recall view; a row with no support is `None`.
    pub fn row_normalized(&self) -> Vec<Option<Vec<f64>>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                (s > 0).then(|| row.iter().map(|&v| v as f64 / s as f64).collect())
            })
            .collect()
    }

    pub fn recall(&self, c: usize) -> Option<f64> {
        let s = self.support(c);
        (s > 0).then(|| self.true_positives(c) as f64 / s as f64)
    }

    pub fn precision(&self, c: usize) -> Option<f64> {
        let p = self.predicted(c);
        (p > 0).then(|| self.true_positives(c) as f64 / p as f64)
    }

    /// `2PR/(P+R)`; zero when either side is undefined or both are zero.
    pub fn f1(&self, c: usize) -> f64 {
        match (self.precision(c), self.recall(c)) {
            (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
            _ => 0.0,
        }
    }
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    ConfusionMatrix::new(truth, pred, classes)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total == 0 {
        return Err(Error::Empty("accuracy: no samples"));
    }
    Ok(cm.trace() as f64 / cm.total as f64)
}

/// Mean recall over the classes that have support. Unsupported classes are
/// left out of the mean (see [`unsupported_classes`]).
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let recalls: Vec<f64> = (0..cm.classes).filter_map(|c| cm.recall(c)).collect();
    if recalls.is_empty() {
        return Err(Error::Empty("balanced_accuracy: every class is empty"));
    }
    let skipped = cm.classes - recalls.len();
    if skipped > 0 {
        log::warn!("balanced accuracy ignores {skipped} class(es) with no support");
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

pub fn unsupported_classes(cm: &ConfusionMatrix) -> Vec<usize> {
    (0..cm.classes).filter(|&c| cm.support(c) == 0).collect()
}

pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total == 0 {
        return Err(Error::Empty("macro_f1: no samples"));
    }
    Ok((0..cm.classes).map(|c| cm.f1(c)).sum::<f64>() / cm.classes as f64)
}

pub fn cohens_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total == 0 {
        return Err(Error::Empty("cohens_kappa: no samples"));
    }
    let n = cm.total as f64;
    let p_o = cm.trace() as f64 / n;
    let p_e = (0..cm.classes)
        .map(|c| cm.predicted(c) as f64 * cm.support(c) as f64)
        .sum::<f64>()
        / (n * n);
    if p_e == 1.0 {
        return Err(Error::Undefined("Cohen's kappa (chance agreement is 1)"));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: usize,
    pub support: u64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    /// `None` when chance agreement is 1.
    pub kappa: Option<f64>,
    pub per_class: Vec<ClassScores>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        let accuracy = accuracy(&confusion)?;
        let balanced_accuracy = balanced_accuracy(&confusion)?;
        let macro_f1 = macro_f1(&confusion)?;
        let kappa = match cohens_kappa(&confusion) {
            Ok(k) => Some(k),
            Err(Error::Undefined(_)) => None,
            Err(e) => return Err(e),
        };
        let per_class = (0..confusion.classes)
            .map(|c| ClassScores {
                class: c,
                support: confusion.support(c),
                recall: confusion.recall(c),
                precision: confusion.precision(c),
                f1: confusion.f1(c),
            })
            .collect();
        Ok(Self {
            accuracy,
            balanced_accuracy,
            macro_f1,
            kappa,
            per_class,
            confusion,
        })
    }

    pub fn from_labels(truth: &[usize], pred: &[usize], classes: usize) -> Result<Self> {
        Self::from_confusion(ConfusionMatrix::new(truth, pred, classes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn four_sample() -> ConfusionMatrix {
        ConfusionMatrix::new(&[0, 0, 1, 1], &[0, 0, 1, 0], 2).unwrap()
    }

    #[test]
    fn identity_diagonal() {
        let l = [0, 1, 2, 3, 4];
        let cm = confusion_matrix(&l, &l, 5).unwrap();
        for a in 0..5 {
            for p in 0..5 {
                assert_eq!(cm.counts[a][p], u64::from(a == p));
            }
        }
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&cm).unwrap(), 1.0);
        assert_eq!(macro_f1(&cm).unwrap(), 1.0);
        assert_eq!(cohens_kappa(&cm).unwrap(), 1.0);
    }

    #[test]
    fn four_sample_worked_values() {
        let cm = four_sample();
        assert_eq!(cm.counts, vec![vec![2, 0], vec![1, 1]]);
        assert_eq!(accuracy(&cm).unwrap(), 0.75);
        assert_eq!(balanced_accuracy(&cm).unwrap(), 0.75);
        assert!((macro_f1(&cm).unwrap() - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(cohens_kappa(&cm).unwrap(), 0.5);
    }

    #[test]
    fn four_sample_in_five_classes_skips_empty_rows_for_balanced_accuracy() {
        let cm = ConfusionMatrix::new(&[0, 0, 1, 1], &[0, 0, 1, 0], 5).unwrap();
        assert_eq!(balanced_accuracy(&cm).unwrap(), 0.75);
        assert_eq!(unsupported_classes(&cm), vec![2, 3, 4]);
        assert!(cm.row_normalized()[2].is_none());
    }

    #[test]
    fn degenerate_inputs() {
        let all_wrong = ConfusionMatrix::new(&[0, 1], &[1, 0], 2).unwrap();
        assert_eq!(accuracy(&all_wrong).unwrap(), 0.0);
        let constant = ConfusionMatrix::new(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap();
        assert_eq!(balanced_accuracy(&constant).unwrap(), 0.5);
        let empty = ConfusionMatrix::new(&[], &[], 5).unwrap();
        assert!(accuracy(&empty).is_err());
        assert!(balanced_accuracy(&empty).is_err());
        let single = ConfusionMatrix::new(&[2, 2, 2], &[2, 2, 2], 5).unwrap();
        assert!(matches!(cohens_kappa(&single), Err(Error::Undefined(_))));
        assert!(ConfusionMatrix::new(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn counts_match_brute_force() {
        let mut rng = seeded(21);
        let truth: Vec<usize> = (0..1000).map(|_| rng.random_range(0..5)).collect();
        let pred: Vec<usize> = (0..1000).map(|_| rng.random_range(0..5)).collect();
        let cm = confusion_matrix(&truth, &pred, 5).unwrap();
        for a in 0..5 {
            for p in 0..5 {
                let n = truth.iter().zip(&pred).filter(|&(&t, &q)| t == a && q == p).count();
                assert_eq!(cm.counts[a][p], n as u64);
            }
        }
        assert_eq!(cm.counts.iter().flatten().sum::<u64>(), cm.total);
    }

    #[test]
    fn majority_constant_predictor_scores_majority_share() {
        let truth = [2, 2, 2, 0, 1, 2, 4];
        let cm = ConfusionMatrix::new(&truth, &[2; 7], 5).unwrap();
        assert_eq!(accuracy(&cm).unwrap(), 4.0 / 7.0);
    }

    #[test]
    fn null_agreement_kappa_near_zero() {
        let mut rng = seeded(77);
        let n = 100_000;
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let k = cohens_kappa(&confusion_matrix(&truth, &pred, 5).unwrap()).unwrap();
        assert!(k.abs() < 0.02, "kappa {k}");
    }
}
