use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Non-overlapping max-pool with window `(1, r)` over `[F, H, W]`.
///
/// Trailing samples that do not fill a window are dropped. Returns the pooled
/// tensor and, for each output element, the flat input index it came from
/// (first occurrence on ties).
pub fn maxpool2d(input: &Tensor, r: usize) -> Result<(Tensor, Vec<usize>)> {
    let [f, h, w] = input.dims3("maxpool2d")?;
    if r == 0 {
        return Err(Error::InvalidArgument("maxpool2d: window must be at least 1".into()));
    }
    if r > w {
        return Err(Error::shape(
            "maxpool2d",
            "width",
            format!("window {r} exceeds input width {w}"),
        ));
    }
    let ow = w / r;
    let x = input.data();
    let mut out = Vec::with_capacity(f * h * ow);
    let mut argmax = Vec::with_capacity(f * h * ow);
    for row in 0..f * h {
        let base = row * w;
        for o in 0..ow {
            let start = base + o * r;
            let mut best = start;
            for idx in start + 1..start + r {
                if x[idx] > x[best] {
                    best = idx;
                }
            }
            out.push(x[best]);
            argmax.push(best);
        }
    }
    Ok((Tensor::new(&[f, h, ow], out)?, argmax))
}

pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.numel() {
        return Err(Error::shape(
            "maxpool2d_backward",
            "grad_out",
            format!("{} gradients for {} pooled positions", grad_out.numel(), argmax.len()),
        ));
    }
    let mut gin = Tensor::zeros(input_shape);
    let gx = gin.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gx[idx] += g;
    }
    Ok(gin)
}
