use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub offset: Tensor,
}

impl LayerNormParams {
    pub fn new(d: usize) -> Self {
        Self {
            gain: Tensor::full(&[d], 1.0),
            offset: Tensor::zeros(&[d]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    shape: [usize; 2],
}

#[derive(Debug, Clone)]
pub struct LayerNormGrads {
    pub input: Tensor,
    pub gain: Tensor,
    pub offset: Tensor,
}

/// Row-wise normalisation with population variance, then `gain * x̂ + offset`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, offset: &Tensor, eps: f64) -> Result<(Tensor, LayerNormCache)> {
    let [s, d] = x.dims2("layer_norm")?;
    if gain.shape() != [d] || offset.shape() != [d] {
        return Err(Error::shape(
            "layer_norm",
            "features",
            format!("gain {:?} / offset {:?} for width {d}", gain.shape(), offset.shape()),
        ));
    }
    let mut out = vec![0.0; s * d];
    let mut normalized = vec![0.0; s * d];
    let mut inv_std = Vec::with_capacity(s);
    for r in 0..s {
        let row = &x.data()[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / math::sqrt(var + eps);
        inv_std.push(is);
        for j in 0..d {
            let xh = (row[j] - mean) * is;
            normalized[r * d + j] = xh;
            out[r * d + j] = gain.data()[j] * xh + offset.data()[j];
        }
    }
    Ok((
        Tensor::new(&[s, d], out)?,
        LayerNormCache {
            normalized,
            inv_std,
            shape: [s, d],
        },
    ))
}

pub fn layer_norm_backward(cache: &LayerNormCache, gain: &Tensor, grad_out: &Tensor) -> Result<LayerNormGrads> {
    let [s, d] = cache.shape;
    if grad_out.shape() != [s, d] {
        return Err(Error::shape(
            "layer_norm_backward",
            "grad_out",
            format!("got {:?}, expected [{s}, {d}]", grad_out.shape()),
        ));
    }
    let g = grad_out.data();
    let mut gx = vec![0.0; s * d];
    let mut ggain = vec![0.0; d];
    let mut goffset = vec![0.0; d];
    let mut gxh = vec![0.0; d];
    for r in 0..s {
        let xh = &cache.normalized[r * d..(r + 1) * d];
        let grow = &g[r * d..(r + 1) * d];
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for j in 0..d {
            ggain[j] += grow[j] * xh[j];
            goffset[j] += grow[j];
            gxh[j] = grow[j] * gain.data()[j];
            sum_g += gxh[j];
            sum_gx += gxh[j] * xh[j];
        }
        let scale = cache.inv_std[r] / d as f64;
        for j in 0..d {
            gx[r * d + j] = scale * (d as f64 * gxh[j] - sum_g - xh[j] * sum_gx);
        }
    }
    Ok(LayerNormGrads {
        input: Tensor::new(&[s, d], gx)?,
        gain: Tensor::new(&[d], ggain)?,
        offset: Tensor::new(&[d], goffset)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_row_normalises_to_zero() {
        let x = Tensor::full(&[2, 4], 3.5);
        let p = LayerNormParams::new(4);
        let (y, _) = layer_norm(&x, &p.gain, &p.offset, LAYER_NORM_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_value_row() {
        let x = Tensor::new(&[1, 2], vec![1.0, 3.0]).unwrap();
        let p = LayerNormParams::new(2);
        let (y, _) = layer_norm(&x, &p.gain, &p.offset, 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn zero_gain_gives_offset() {
        let x = Tensor::new(&[2, 3], vec![1., 5., -2., 0., 4., 9.]).unwrap();
        let gain = Tensor::zeros(&[3]);
        let offset = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let (y, _) = layer_norm(&x, &gain, &offset, LAYER_NORM_EPS).unwrap();
        assert_eq!(y.data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }
}
