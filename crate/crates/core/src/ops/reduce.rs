use alloc::vec;

use crate::error::Result;
use crate::tensor::Tensor;

/// Averages a `[rows, cols]` matrix over its rows, giving `[cols]`.
pub fn mean_over_axis(x: &Tensor) -> Result<Tensor> {
    let [rows, cols] = x.dims2("mean_over_axis")?;
    let mut out = vec![0.0; cols];
    for row in x.data().chunks(cols) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
    out.iter_mut().for_each(|o| *o /= rows as f64);
    Tensor::new(&[cols], out)
}

pub fn mean_over_axis_backward(rows: usize, grad_out: &Tensor) -> Result<Tensor> {
    let cols = grad_out.numel();
    let mut g = vec![0.0; rows * cols];
    for row in g.chunks_mut(cols) {
        row.iter_mut()
            .zip(grad_out.data())
            .for_each(|(o, v)| *o = v / rows as f64);
    }
    Tensor::new(&[rows, cols], g)
}
