//! Class-weighted cross-entropy and the weighting schemes it can use.
//!
//! With frequencies `f` over `n` training samples and `Y` classes:
//! - regular: `w_i = n / f_i`
//! - balanced: `w_i = n / (f_i * Y)`
//! - log-scaled: `w_i = ln(n / f_i)`
//!
//! The loss is `(1/n) Σ w_{y_i} · (−ln p_{i, y_i})`, divided by the batch size
//! rather than by the sum of weights.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    None,
    Regular,
    Balanced,
    LogScaled,
}

impl WeightScheme {
    pub const ALL: [WeightScheme; 4] = [
        WeightScheme::None,
        WeightScheme::Regular,
        WeightScheme::Balanced,
        WeightScheme::LogScaled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightScheme::None => "none",
            WeightScheme::Regular => "regular",
            WeightScheme::Balanced => "balanced",
            WeightScheme::LogScaled => "log_scaled",
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(WeightScheme::None),
            "regular" => Ok(WeightScheme::Regular),
            "balanced" => Ok(WeightScheme::Balanced),
            "log" | "log_scaled" | "log-scaled" => Ok(WeightScheme::LogScaled),
            other => Err(Error::InvalidArgument(format!(
                "unknown weighting scheme `{other}` (expected none, regular, balanced or log)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub frequencies: Vec<u64>,
    pub total: u64,
    pub scheme: WeightScheme,
    pub weights: Vec<f64>,
    /// Classes whose weight came out as exactly zero (log-scaled with
    /// `f_i == n`); they contribute nothing to the loss.
    pub zero_weight_classes: Vec<usize>,
}

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        Self {
            frequencies: vec![0; classes],
            total: 0,
            scheme: WeightScheme::None,
            weights: vec![1.0; classes],
            zero_weight_classes: Vec::new(),
        }
    }

    /// Counts `labels` and derives weights. Training labels only.
    pub fn from_labels(labels: &[usize], classes: usize, scheme: WeightScheme) -> Result<Self> {
        let frequencies = class_frequencies(labels, classes)?;
        Self::from_frequencies(frequencies, scheme)
    }

    pub fn from_frequencies(frequencies: Vec<u64>, scheme: WeightScheme) -> Result<Self> {
        let total: u64 = frequencies.iter().sum();
        let weights = match scheme {
            WeightScheme::None => vec![1.0; frequencies.len()],
            WeightScheme::Regular => regular_weights(&frequencies, total)?,
            WeightScheme::Balanced => balanced_weights(&frequencies, total, frequencies.len())?,
            WeightScheme::LogScaled => log_scaled_weights(&frequencies, total)?,
        };
        let zero_weight_classes = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w == 0.0)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            frequencies,
            total,
            scheme,
            weights,
            zero_weight_classes,
        })
    }
}

pub fn class_frequencies(labels: &[usize], classes: usize) -> Result<Vec<u64>> {
    if labels.is_empty() {
        return Err(Error::Empty("class_frequencies: no labels"));
    }
    let mut f = vec![0u64; classes];
    for &l in labels {
        *f.get_mut(l).ok_or_else(|| {
            Error::InvalidArgument(format!("label {l} outside 0..{classes}"))
        })? += 1;
    }
    Ok(f)
}

fn check_frequencies(f: &[u64]) -> Result<()> {
    match f.iter().position(|&c| c == 0) {
        Some(class) => Err(Error::ZeroFrequency { class }),
        None => Ok(()),
    }
}

pub fn regular_weights(f: &[u64], n: u64) -> Result<Vec<f64>> {
    check_frequencies(f)?;
    Ok(f.iter().map(|&fi| n as f64 / fi as f64).collect())
}

pub fn balanced_weights(f: &[u64], n: u64, classes: usize) -> Result<Vec<f64>> {
    check_frequencies(f)?;
    Ok(f.iter()
        .map(|&fi| n as f64 / (fi as f64 * classes as f64))
        .collect())
}

pub fn log_scaled_weights(f: &[u64], n: u64) -> Result<Vec<f64>> {
    let w: Vec<f64> = regular_weights(f, n)?.into_iter().map(math::ln).collect();
    for (class, _) in w.iter().enumerate().filter(|(_, &v)| v == 0.0) {
        log::warn!("class {class} holds every sample; its log-scaled weight is 0");
    }
    Ok(w)
}

/// Per-sample cross-entropy `−ln softmax(logits)[label]`, computed with the
/// log-sum-exp shift.
pub fn cross_entropy_row(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + math::ln(logits.iter().map(|&v| math::exp(v - max)).sum());
    lse - logits[label]
}

/// Writes `scale · (softmax(logits) − onehot(label))` into `grad`.
pub fn cross_entropy_row_grad(logits: &[f64], label: usize, scale: f64, grad: &mut [f64]) {
    grad.copy_from_slice(logits);
    crate::ops::activation::softmax_in_place(grad);
    grad[label] -= 1.0;
    grad.iter_mut().for_each(|g| *g *= scale);
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient of `loss` with respect to the logits, `[n, Y]`.
    pub grad: Tensor,
}

pub fn weighted_cross_entropy(logits: &Tensor, labels: &[usize], weights: &[f64]) -> Result<LossOutput> {
    let [n, y] = logits.dims2("weighted_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::shape(
            "weighted_cross_entropy",
            "labels",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    if weights.len() != y {
        return Err(Error::shape(
            "weighted_cross_entropy",
            "weights",
            format!("{} weights for {y} classes", weights.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= y) {
        return Err(Error::InvalidArgument(format!("label {bad} outside 0..{y}")));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * y];
    for (i, (row, &label)) in logits.data().chunks(y).zip(labels).enumerate() {
        let w = weights[label];
        loss += w * cross_entropy_row(row, label);
        cross_entropy_row_grad(row, label, w / n as f64, &mut grad[i * y..(i + 1) * y]);
    }
    Ok(LossOutput {
        loss: loss / n as f64,
        grad: Tensor::new(&[n, y], grad)?,
    })
}

/// Human-readable summary of a weight vector, used in logs and the CLI.
pub fn describe(weights: &ClassWeights) -> String {
    let ws: Vec<String> = weights.weights.iter().map(|w| format!("{w:.4}")).collect();
    format!("{} [{}]", weights.scheme, ws.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    const F: [u64; 5] = [50, 10, 25, 10, 5];

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn frequencies() {
        assert_eq!(class_frequencies(&[0, 0, 1], 5).unwrap(), vec![2, 1, 0, 0, 0]);
        let uniform: Vec<usize> = (0..50).map(|i| i % 5).collect();
        assert_eq!(class_frequencies(&uniform, 5).unwrap(), vec![10; 5]);
        assert!(class_frequencies(&[], 5).is_err());
        assert!(class_frequencies(&[5], 5).is_err());
    }

    #[test]
    fn frequencies_match_counting_oracle() {
        let mut rng = seeded(1);
        let labels: Vec<usize> = (0..1000).map(|_| rng.random_range(0..5)).collect();
        let f = class_frequencies(&labels, 5).unwrap();
        for c in 0..5 {
            assert_eq!(f[c], labels.iter().filter(|&&l| l == c).count() as u64);
        }
    }

    #[test]
    fn regular_examples() {
        close(&regular_weights(&[10; 5], 50).unwrap(), &[5.0; 5], 0.0);
        close(&regular_weights(&F, 100).unwrap(), &[2.0, 10.0, 4.0, 10.0, 20.0], 1e-15);
        close(&regular_weights(&[7], 7).unwrap(), &[1.0], 0.0);
        assert_eq!(
            regular_weights(&[3, 0, 2], 5).unwrap_err(),
            Error::ZeroFrequency { class: 1 }
        );
    }

    #[test]
    fn balanced_examples() {
        close(&balanced_weights(&[10; 5], 50, 5).unwrap(), &[1.0; 5], 1e-15);
        close(&balanced_weights(&F, 100, 5).unwrap(), &[0.4, 2.0, 0.8, 2.0, 4.0], 1e-15);
        assert_eq!(balanced_weights(&[4], 4, 1).unwrap(), regular_weights(&[4], 4).unwrap());
    }

    #[test]
    fn log_scaled_examples() {
        close(&log_scaled_weights(&[10; 5], 50).unwrap(), &[1.6094379124341003; 5], 1e-12);
        close(
            &log_scaled_weights(&F, 100).unwrap(),
            &[0.6931471805599453, 2.302585092994046, 1.3862943611198906, 2.302585092994046, 2.995732273553991],
            1e-12,
        );
        close(
            &log_scaled_weights(&[100, 10], 110).unwrap(),
            &[0.09531017980432493, 2.3978952727983707],
            1e-12,
        );
        let w = ClassWeights::from_frequencies(vec![9], WeightScheme::LogScaled).unwrap();
        assert_eq!(w.weights, vec![0.0]);
        assert_eq!(w.zero_weight_classes, vec![0]);
    }

    #[test]
    fn uniform_logits_loss() {
        let logits = Tensor::zeros(&[1, 5]);
        let out = weighted_cross_entropy(&logits, &[2], &[1.0; 5]).unwrap();
        assert!((out.loss - 1.6094379124341003).abs() < 1e-12);
        let mut w = [1.0; 5];
        w[2] = 2.0;
        let out = weighted_cross_entropy(&logits, &[2], &w).unwrap();
        assert!((out.loss - 3.2188758248682006).abs() < 1e-12);
    }

    #[test]
    fn loss_vanishes_when_confident() {
        let mut logits = Tensor::zeros(&[3, 5]);
        let labels = [0, 3, 4];
        for (i, &l) in labels.iter().enumerate() {
            logits.data_mut()[i * 5 + l] = 60.0;
        }
        let out = weighted_cross_entropy(&logits, &labels, &[2.0; 5]).unwrap();
        assert!(out.loss >= 0.0 && out.loss < 1e-20);
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("log".parse::<WeightScheme>().unwrap(), WeightScheme::LogScaled);
        assert_eq!("balanced".parse::<WeightScheme>().unwrap(), WeightScheme::Balanced);
        assert!("focal".parse::<WeightScheme>().is_err());
    }
}
