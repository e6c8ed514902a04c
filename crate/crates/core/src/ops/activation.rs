use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.zero_grad();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gradient flows only where the input was strictly positive.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Softmax over the last axis, shifted by the row maximum.
pub fn softmax(logits: &Tensor) -> Tensor {
    let y = *logits.shape().last().expect("tensor has at least one axis");
    let mut out = logits.clone();
    out.zero_grad();
    for row in out.data_mut().chunks_mut(y) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = math::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Given softmax output `probs` and upstream gradient, returns the gradient
/// with respect to the logits.
pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Tensor {
    let y = *probs.shape().last().expect("tensor has at least one axis");
    let mut g = grad_out.clone();
    for (grow, prow) in g.data_mut().chunks_mut(y).zip(probs.data().chunks(y)) {
        softmax_backward_row(prow, grow);
    }
    g
}

pub(crate) fn softmax_backward_row(probs: &[f64], grad: &mut [f64]) {
    let dot: f64 = probs.iter().zip(grad.iter()).map(|(p, g)| p * g).sum();
    for (g, &p) in grad.iter_mut().zip(probs) {
        *g = p * (*g - dot);
    }
}

/// Inverted dropout. In train mode each element is zeroed with probability
/// `p` and survivors are scaled by `1/(1-p)`. The returned mask holds the
/// per-element multiplier (`None` when the op is the identity).
pub fn dropout(x: &Tensor, p: f64, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(alloc::format!(
            "dropout probability must lie in [0, 1), got {p}"
        )));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let scale = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
        .collect();
    let mut y = x.clone();
    y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
    Ok((y, Some(mask)))
}

pub fn dropout_backward(grad_out: &Tensor, mask: Option<&[f64]>) -> Tensor {
    let mut g = grad_out.clone();
    if let Some(mask) = mask {
        g.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn relu_values_and_gradient() {
        let x = Tensor::from_vec(alloc::vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::from_vec(alloc::vec![0.5, 3.0]);
        assert_eq!(relu(&pos), pos);
        let x = Tensor::from_vec(alloc::vec![-1.0, 2.0]);
        let g = relu_backward(&x, &Tensor::full(&[2], 1.0));
        assert_eq!(g.data(), &[0.0, 1.0]);
        let at_zero = relu_backward(&Tensor::zeros(&[1]), &Tensor::full(&[1], 1.0));
        assert_eq!(at_zero.data(), &[0.0]);
    }

    #[test]
    fn softmax_known_values() {
        let y = softmax(&Tensor::zeros(&[5]));
        for &p in y.data() {
            assert!((p - 0.2).abs() < 1e-15);
        }
        let y = softmax(&Tensor::from_vec(alloc::vec![math::ln(2.0), 0.0]));
        assert!((y.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((y.data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut rng = seeded(5);
        let x = Tensor::uniform(&[7, 5], 30.0, &mut rng);
        let y = softmax(&x);
        for row in y.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p > 0.0));
        }
        let mut shifted = x.clone();
        shifted.data_mut().iter_mut().for_each(|v| *v += 123.25);
        let ys = softmax(&shifted);
        for (a, b) in y.data().iter().zip(ys.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = seeded(0);
        let x = Tensor::uniform(&[10], 1.0, &mut rng);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert_eq!(dropout(&x, 0.9, Mode::Eval, &mut rng).unwrap().0, x);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout(&x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_replays_seeded_mask() {
        let x = Tensor::from_vec(alloc::vec![1.0, 2.0, 3.0, 4.0]);
        let (a, _) = dropout(&x, 0.5, Mode::Train, &mut seeded(42)).unwrap();
        let (b, _) = dropout(&x, 0.5, Mode::Train, &mut seeded(42)).unwrap();
        assert_eq!(a, b);
        // replay the draws by hand
        let mut rng = seeded(42);
        let expected: Vec<f64> = x
            .data()
            .iter()
            .map(|&v| if rng.random::<f64>() < 0.5 { 0.0 } else { 2.0 * v })
            .collect();
        assert_eq!(a.data(), &expected[..]);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = seeded(7);
        let x = Tensor::full(&[1], 1.0);
        let trials = 100_000;
        let mut total = 0.0;
        for _ in 0..trials {
            total += dropout(&x, 0.25, Mode::Train, &mut rng).unwrap().0.data()[0];
        }
        let mean = total / trials as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }
}
