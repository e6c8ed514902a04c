//! Multi-head scaled dot-product self-attention without masking.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::activation::{softmax_backward_row, softmax_in_place};
use super::linear::{linear, linear_backward, matmul_at_into, matmul_bt_into, matmul_into, Linear};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl AttentionParams {
    pub fn init(d_model: usize, rng: &mut Rng) -> Self {
        Self {
            query: Linear::init(d_model, d_model, rng),
            key: Linear::init(d_model, d_model, rng),
            value: Linear::init(d_model, d_model, rng),
            output: Linear::init(d_model, d_model, rng),
        }
    }

    pub fn zeros(d_model: usize) -> Self {
        Self {
            query: Linear::zeros(d_model, d_model),
            key: Linear::zeros(d_model, d_model),
            value: Linear::zeros(d_model, d_model),
            output: Linear::zeros(d_model, d_model),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    input: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Per head `[S, S]` attention weights, heads stacked.
    probs: Vec<f64>,
    concat: Tensor,
    heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub input: Tensor,
    pub params: AttentionParams,
}

/// Gathers head `h` of a `[S, D]` buffer into a contiguous `[S, dh]` block.
fn head_slice(src: &[f64], s: usize, d: usize, dh: usize, h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(s * dh);
    for r in 0..s {
        out.extend_from_slice(&src[r * d + h * dh..r * d + (h + 1) * dh]);
    }
    out
}

fn scatter_head(dst: &mut [f64], block: &[f64], s: usize, d: usize, dh: usize, h: usize) {
    for r in 0..s {
        for (o, v) in dst[r * d + h * dh..r * d + (h + 1) * dh]
            .iter_mut()
            .zip(&block[r * dh..(r + 1) * dh])
        {
            *o += v;
        }
    }
}

pub fn multi_head_self_attention(
    x: &Tensor,
    heads: usize,
    params: &AttentionParams,
) -> Result<(Tensor, AttentionCache)> {
    let [s, d] = x.dims2("multi_head_self_attention")?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::shape(
            "multi_head_self_attention",
            "heads",
            format!("model width {d} is not divisible by {heads} heads"),
        ));
    }
    let dh = d / heads;
    let scale = 1.0 / math::sqrt(dh as f64);
    let q = params.query.forward(x)?;
    let k = params.key.forward(x)?;
    let v = params.value.forward(x)?;

    let mut probs = vec![0.0; heads * s * s];
    let mut concat = vec![0.0; s * d];
    for h in 0..heads {
        let qh = head_slice(q.data(), s, d, dh, h);
        let kh = head_slice(k.data(), s, d, dh, h);
        let vh = head_slice(v.data(), s, d, dh, h);
        let p = &mut probs[h * s * s..(h + 1) * s * s];
        matmul_bt_into(&qh, &kh, p, s, dh, s);
        for row in p.chunks_mut(s) {
            row.iter_mut().for_each(|v| *v *= scale);
            softmax_in_place(row);
        }
        let mut oh = vec![0.0; s * dh];
        matmul_into(p, &vh, &mut oh, s, s, dh);
        scatter_head(&mut concat, &oh, s, d, dh, h);
    }
    let concat = Tensor::new(&[s, d], concat)?;
    let out = linear(&concat, &params.output.weight, &params.output.bias)?;
    Ok((
        out,
        AttentionCache {
            input: x.clone(),
            q,
            k,
            v,
            probs,
            concat,
            heads,
        },
    ))
}

pub fn multi_head_self_attention_backward(
    cache: &AttentionCache,
    params: &AttentionParams,
    grad_out: &Tensor,
) -> Result<AttentionGrads> {
    let [s, d] = cache.input.dims2("multi_head_self_attention_backward")?;
    let heads = cache.heads;
    let dh = d / heads;
    let scale = 1.0 / math::sqrt(dh as f64);

    let out_g = linear_backward(&cache.concat, &params.output.weight, grad_out)?;
    let g_concat = out_g.input.data();

    let mut gq = vec![0.0; s * d];
    let mut gk = vec![0.0; s * d];
    let mut gv = vec![0.0; s * d];
    for h in 0..heads {
        let qh = head_slice(cache.q.data(), s, d, dh, h);
        let kh = head_slice(cache.k.data(), s, d, dh, h);
        let vh = head_slice(cache.v.data(), s, d, dh, h);
        let goh = head_slice(g_concat, s, d, dh, h);
        let p = &cache.probs[h * s * s..(h + 1) * s * s];

        // out_h = P V_h
        let mut gp = vec![0.0; s * s];
        matmul_bt_into(&goh, &vh, &mut gp, s, dh, s);
        let mut gvh = vec![0.0; s * dh];
        matmul_at_into(p, &goh, &mut gvh, s, s, dh);

        for (grow, prow) in gp.chunks_mut(s).zip(p.chunks(s)) {
            softmax_backward_row(prow, grow);
            grow.iter_mut().for_each(|v| *v *= scale);
        }
        // scores = Q_h K_h^T * scale
        let mut gqh = vec![0.0; s * dh];
        matmul_into(&gp, &kh, &mut gqh, s, s, dh);
        let mut gkh = vec![0.0; s * dh];
        matmul_at_into(&gp, &qh, &mut gkh, s, s, dh);

        scatter_head(&mut gq, &gqh, s, d, dh, h);
        scatter_head(&mut gk, &gkh, s, d, dh, h);
        scatter_head(&mut gv, &gvh, s, d, dh, h);
    }

    let gq = linear_backward(&cache.input, &params.query.weight, &Tensor::new(&[s, d], gq)?)?;
    let gk = linear_backward(&cache.input, &params.key.weight, &Tensor::new(&[s, d], gk)?)?;
    let gv = linear_backward(&cache.input, &params.value.weight, &Tensor::new(&[s, d], gv)?)?;

    let mut gx = gq.input;
    for (a, (b, c)) in gx
        .data_mut()
        .iter_mut()
        .zip(gk.input.data().iter().zip(gv.input.data()))
    {
        *a += b + c;
    }

    Ok(AttentionGrads {
        input: gx,
        params: AttentionParams {
            query: Linear {
                weight: gq.weight,
                bias: gq.bias,
            },
            key: Linear {
                weight: gk.weight,
                bias: gk.bias,
            },
            value: Linear {
                weight: gv.weight,
                bias: gv.bias,
            },
            output: Linear {
                weight: out_g.weight,
                bias: out_g.bias,
            },
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn identity_params(d: usize) -> AttentionParams {
        let mut p = AttentionParams::zeros(d);
        for lin in [&mut p.query, &mut p.key, &mut p.value, &mut p.output] {
            for i in 0..d {
                lin.weight.data_mut()[i * d + i] = 1.0;
            }
        }
        p
    }

    #[test]
    fn hand_evaluated_two_token_case() {
        let x = Tensor::new(&[2, 1], vec![1.0, 0.0]).unwrap();
        let (y, _) = multi_head_self_attention(&x, 1, &identity_params(1)).unwrap();
        let e = math::exp(1.0);
        assert!((y.data()[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((y.data()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_token_returns_projected_value() {
        let mut rng = seeded(8);
        let p = AttentionParams::init(8, &mut rng);
        let x = Tensor::uniform(&[1, 8], 1.0, &mut rng);
        let (y, _) = multi_head_self_attention(&x, 4, &p).unwrap();
        let expected = p.output.forward(&p.value.forward(&x).unwrap()).unwrap();
        for (a, b) in y.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn identical_rows_stay_identical() {
        let mut rng = seeded(9);
        let p = AttentionParams::init(8, &mut rng);
        let row = Tensor::uniform(&[8], 1.0, &mut rng);
        let mut data = Vec::new();
        for _ in 0..5 {
            data.extend_from_slice(row.data());
        }
        let x = Tensor::new(&[5, 8], data).unwrap();
        let (y, _) = multi_head_self_attention(&x, 4, &p).unwrap();
        let first = &y.data()[..8];
        for r in y.data().chunks(8) {
            assert_eq!(r, first);
        }
    }

    #[test]
    fn indivisible_width_rejected() {
        let p = AttentionParams::zeros(6);
        let x = Tensor::zeros(&[2, 6]);
        assert!(matches!(
            multi_head_self_attention(&x, 4, &p),
            Err(Error::Shape { dim: "heads", .. })
        ));
    }
}
