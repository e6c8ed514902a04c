//! Direct 2-D convolution over `[channels, height, width]` feature maps.
//!
//! Padding is given per side so "same" width works for even kernels too. The
//! backward pass walks output positions and skips zero upstream gradients,
//! which makes it cheap when a max-pool sits right after the convolution.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub left: usize,
    pub right: usize,
    pub top: usize,
    pub bottom: usize,
}

impl Padding {
    /// Total width padding `kernel_w - 1`, left side taking the larger half,
    /// so a stride-1 convolution keeps the input width.
    pub fn same_width(kernel_w: usize) -> Self {
        let total = kernel_w.saturating_sub(1);
        Padding {
            left: total.div_ceil(2),
            right: total / 2,
            top: 0,
            bottom: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub num_filters: usize,
    /// (height, width)
    pub kernel: (usize, usize),
    /// (height, width)
    pub stride: (usize, usize),
    pub padding: Padding,
}

impl ConvSpec {
    pub fn new(num_filters: usize, kernel: (usize, usize)) -> Self {
        Self {
            num_filters,
            kernel,
            stride: (1, 1),
            padding: Padding::default(),
        }
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    /// Output `(height, width)` for an input of `(height, width)`.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || self.num_filters == 0 {
            return Err(Error::shape(
                "conv2d",
                "spec",
                format!("kernel, stride and filter count must be positive: {self:?}"),
            ));
        }
        let ph = h + self.padding.top + self.padding.bottom;
        let pw = w + self.padding.left + self.padding.right;
        if ph < kh {
            return Err(Error::shape(
                "conv2d",
                "height",
                format!("padded height {ph} is smaller than kernel height {kh}"),
            ));
        }
        if pw < kw {
            return Err(Error::shape(
                "conv2d",
                "width",
                format!("padded width {pw} is smaller than kernel width {kw}"),
            ));
        }
        Ok(((ph - kh) / sh + 1, (pw - kw) / sw + 1))
    }

    fn check(&self, input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Geometry> {
        let [cin, h, w] = input.dims3("conv2d")?;
        let (kh, kw) = self.kernel;
        let expected = [self.num_filters, cin, kh, kw];
        if weights.shape() != expected {
            let dim = if weights.ndim() != 4 {
                "weights rank"
            } else if weights.shape()[0] != self.num_filters {
                "filters"
            } else if weights.shape()[1] != cin {
                "input channels"
            } else if weights.shape()[2] != kh {
                "kernel height"
            } else {
                "kernel width"
            };
            return Err(Error::shape(
                "conv2d",
                dim,
                format!("weights {:?}, expected {expected:?}", weights.shape()),
            ));
        }
        if bias.shape() != [self.num_filters] {
            return Err(Error::shape(
                "conv2d",
                "bias",
                format!("bias {:?}, expected [{}]", bias.shape(), self.num_filters),
            ));
        }
        let (oh, ow) = self.output_hw(h, w)?;
        Ok(Geometry {
            cin,
            h,
            w,
            oh,
            ow,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

/// Output columns `[lo, hi)` whose receptive tap `j` lands inside the input.
#[inline]
fn valid_cols(j: usize, left: usize, sw: usize, w: usize, ow: usize) -> (usize, usize) {
    // iw = o * sw + j - left must lie in [0, w)
    let lo = if j >= left { 0 } else { (left - j).div_ceil(sw) };
    let hi = if w + left > j {
        ((w + left - j - 1) / sw + 1).min(ow)
    } else {
        0
    };
    (lo, hi.max(lo))
}

const BLOCK: usize = 8;

/// `out[o] += Σⱼ w[j]·x[o + j]` for every `o`; `x` holds at least
/// `out.len() + w.len() - 1` samples.
#[inline]
fn correlate_row(x: &[f64], w: &[f64], out: &mut [f64]) {
    let n = out.len();
    let full = n - n % BLOCK;
    for o in (0..full).step_by(BLOCK) {
        let mut acc = [0.0; BLOCK];
        for (j, &wv) in w.iter().enumerate() {
            let xs = &x[o + j..o + j + BLOCK];
            for k in 0..BLOCK {
                acc[k] += wv * xs[k];
            }
        }
        for (d, a) in out[o..o + BLOCK].iter_mut().zip(acc) {
            *d += a;
        }
    }
    for o in full..n {
        out[o] += w.iter().zip(&x[o..]).map(|(a, b)| a * b).sum::<f64>();
    }
}

pub fn conv2d(input: &Tensor, spec: &ConvSpec, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = spec.check(input, weights, bias)?;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let pad = spec.padding;
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0; spec.num_filters * g.oh * g.ow];

    // Stride-1 rows go through a zero-padded copy so the inner loop has no
    // bounds to clip and can keep a block of outputs in registers.
    let mut padded = vec![0.0; if sw == 1 { g.w + pad.left + pad.right } else { 0 }];

    for f in 0..spec.num_filters {
        for oh in 0..g.oh {
            let row = &mut out[(f * g.oh + oh) * g.ow..][..g.ow];
            row.fill(bias.data()[f]);
            for c in 0..g.cin {
                for i in 0..kh {
                    let Some(ih) = (oh * sh + i).checked_sub(pad.top).filter(|&ih| ih < g.h) else {
                        continue;
                    };
                    let in_row = &x[(c * g.h + ih) * g.w..][..g.w];
                    let w_row = &wt[((f * g.cin + c) * kh + i) * kw..][..kw];
                    if sw == 1 {
                        padded[pad.left..pad.left + g.w].copy_from_slice(in_row);
                        correlate_row(&padded, w_row, row);
                        continue;
                    }
                    for (j, &wv) in w_row.iter().enumerate() {
                        let (lo, hi) = valid_cols(j, pad.left, sw, g.w, g.ow);
                        for (o, out_v) in row.iter_mut().enumerate().take(hi).skip(lo) {
                            *out_v += wv * in_row[o * sw + j - pad.left];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[spec.num_filters, g.oh, g.ow], out)
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    /// `None` when the caller did not ask for it.
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<Conv2dGrads> {
    let bias_shape = Tensor::zeros(&[spec.num_filters]);
    let g = spec.check(input, weights, &bias_shape)?;
    if grad_out.shape() != [spec.num_filters, g.oh, g.ow] {
        return Err(Error::shape(
            "conv2d_backward",
            "grad_out",
            format!(
                "got {:?}, expected {:?}",
                grad_out.shape(),
                [spec.num_filters, g.oh, g.ow]
            ),
        ));
    }
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let pad = spec.padding;
    let x = input.data();
    let wt = weights.data();
    let go = grad_out.data();

    let mut gw = vec![0.0; weights.numel()];
    let mut gb = vec![0.0; spec.num_filters];
    let mut gx: Vec<f64> = if need_input_grad {
        vec![0.0; input.numel()]
    } else {
        Vec::new()
    };

    for f in 0..spec.num_filters {
        for oh in 0..g.oh {
            for o in 0..g.ow {
                let gv = go[(f * g.oh + oh) * g.ow + o];
                if gv == 0.0 {
                    continue;
                }
                gb[f] += gv;
                // taps j with iw = o*sw + j - left in [0, w)
                let base = o * sw;
                let j_lo = pad.left.saturating_sub(base);
                let j_hi = (g.w + pad.left).saturating_sub(base).min(kw);
                if j_lo >= j_hi {
                    continue;
                }
                let iw0 = base + j_lo - pad.left;
                let len = j_hi - j_lo;
                for c in 0..g.cin {
                    for i in 0..kh {
                        let Some(ih) = (oh * sh + i).checked_sub(pad.top).filter(|&ih| ih < g.h) else {
                            continue;
                        };
                        let in_off = (c * g.h + ih) * g.w + iw0;
                        let w_off = ((f * g.cin + c) * kh + i) * kw + j_lo;
                        for (gw_v, &xv) in gw[w_off..w_off + len].iter_mut().zip(&x[in_off..in_off + len]) {
                            *gw_v += gv * xv;
                        }
                        if need_input_grad {
                            for (gx_v, &wv) in gx[in_off..in_off + len].iter_mut().zip(&wt[w_off..w_off + len]) {
                                *gx_v += gv * wv;
                            }
                        }
                    }
                }
            }
        }
    }

    Ok(Conv2dGrads {
        input: if need_input_grad {
            Some(Tensor::new(input.shape(), gx)?)
        } else {
            None
        },
        weights: Tensor::new(weights.shape(), gw)?,
        bias: Tensor::new(&[spec.num_filters], gb)?,
    })
}
