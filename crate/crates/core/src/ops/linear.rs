use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Weight `[din, dout]` and bias `[dout]`, applied as `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn init(din: usize, dout: usize, rng: &mut Rng) -> Self {
        Self {
            weight: Tensor::glorot(&[din, dout], din, dout, rng),
            bias: Tensor::zeros(&[dout]),
        }
    }

    pub fn zeros(din: usize, dout: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[din, dout]),
            bias: Tensor::zeros(&[dout]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        linear(x, &self.weight, &self.bias)
    }
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// `a [m, k] @ b [k, n]`, accumulated row by row.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// `a [m, k] @ b[n, k]^T`
/// Dot product with independent partial sums so the loop is not bound by
/// add latency.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

pub(crate) fn matmul_bt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `a [k, m]^T @ b [k, n]`
pub(crate) fn matmul_at_into(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a[p * m..(p + 1) * m].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

fn check(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    let [s, din] = x.dims2("linear")?;
    let [wdin, dout] = w.dims2("linear")?;
    if wdin != din {
        return Err(Error::shape(
            "linear",
            "input features",
            format!("input has {din} features, weight expects {wdin}"),
        ));
    }
    if b.shape() != [dout] {
        return Err(Error::shape(
            "linear",
            "bias",
            format!("bias {:?}, expected [{dout}]", b.shape()),
        ));
    }
    Ok((s, din, dout))
}

pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (s, din, dout) = check(x, w, b)?;
    let mut out = vec![0.0; s * dout];
    for row in out.chunks_mut(dout) {
        row.copy_from_slice(b.data());
    }
    matmul_into(x.data(), w.data(), &mut out, s, din, dout);
    Tensor::new(&[s, dout], out)
}

pub fn linear_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<LinearGrads> {
    let [s, din] = x.dims2("linear_backward")?;
    let [_, dout] = w.dims2("linear_backward")?;
    if grad_out.shape() != [s, dout] {
        return Err(Error::shape(
            "linear_backward",
            "grad_out",
            format!("got {:?}, expected [{s}, {dout}]", grad_out.shape()),
        ));
    }
    let g = grad_out.data();
    let mut gx = vec![0.0; s * din];
    matmul_bt_into(g, w.data(), &mut gx, s, dout, din);
    let mut gw = vec![0.0; din * dout];
    matmul_at_into(x.data(), g, &mut gw, s, din, dout);
    let mut gb = vec![0.0; dout];
    for row in g.chunks(dout) {
        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    Ok(LinearGrads {
        input: Tensor::new(&[s, din], gx)?,
        weight: Tensor::new(&[din, dout], gw)?,
        bias: Tensor::new(&[dout], gb)?,
    })
}
