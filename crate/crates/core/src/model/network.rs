//! Forward and backward passes through the full layer chain:
//!
//! ```text
//! (C, W) ─reshape→ (1, C, W) ─spatial conv (C filters, kernel (C,1))→ (C, 1, W) ─permute→ (1, C, W)
//!   ─P branches: conv (L, kernel (1, i·K₁), same width) → ReLU → maxpool (1, r)→ (L, C, W/r) each
//!   ─concat filters→ (P·L, C, W/r)
//!   ─PCC conv (L, kernel (1, K₁)) → ReLU → maxpool (1, r)→ (L, C, d_w)
//!   ─fuse filters×channels→ (L·C, d_w) ─permute→ (d_w, d_h)
//!   ─N post-norm encoder layers→ (d_w, d_h)
//!   ─mean over d_w→ (d_h) ─linear+ReLU→ (L·C) ─linear→ (Y) ─softmax
//! ```
//!
//! `W = S·T`. No normalisation layers sit inside the convolutional stack.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::config::ModelConfig;
use super::params::{ConvParams, EncoderLayerParams, ModelParams};
use crate::error::{Error, Result};
use crate::ops::attention::{AttentionCache, AttentionParams};
use crate::ops::norm::LayerNormCache;
use crate::ops::{self, ConvSpec, Linear, Mode, Padding, LAYER_NORM_EPS};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// How a forward pass treats dropout.
pub enum Pass<'r> {
    Eval,
    Train(&'r mut Rng),
}

impl Pass<'_> {
    fn mode(&self) -> Mode {
        match self {
            Pass::Eval => Mode::Eval,
            Pass::Train(_) => Mode::Train,
        }
    }
}

fn spatial_spec(cfg: &ModelConfig) -> ConvSpec {
    ConvSpec::new(cfg.channels, (cfg.channels, 1))
}

fn branch_spec(cfg: &ModelConfig, scale: usize) -> ConvSpec {
    let k = cfg.kernel_width(scale);
    ConvSpec::new(cfg.filters, (1, k)).with_padding(Padding::same_width(k))
}

fn pcc_spec(cfg: &ModelConfig) -> ConvSpec {
    let k = cfg.base_kernel;
    ConvSpec::new(cfg.filters, (1, k)).with_padding(Padding::same_width(k))
}

fn expect_shape(op: &'static str, t: &Tensor, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::shape(
            op,
            "input",
            format!("got {:?}, expected {shape:?}", t.shape()),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------- spatial

/// `(C, W)` → `(1, C, W)` of virtual channels. With one channel this is a
/// reshape only.
pub fn spatial_forward(x: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    let w = cfg.input_width();
    expect_shape("spatial_forward", x, &[cfg.channels, w])?;
    let reshaped = x.clone().reshape(&[1, cfg.channels, w])?;
    match &params.spatial {
        None => Ok(reshaped),
        Some(p) => {
            let out = ops::conv2d(&reshaped, &spatial_spec(cfg), &p.weight, &p.bias)?;
            // (C, 1, W) -> (1, C, W): the filter axis becomes the row axis.
            out.reshape(&[1, cfg.channels, w])
        }
    }
}

// ---------------------------------------------------------------- conv block

#[derive(Debug, Clone)]
struct BlockTrace {
    pre_relu: Tensor,
    argmax: Vec<usize>,
}

fn conv_block(
    input: &Tensor,
    spec: &ConvSpec,
    p: &ConvParams,
    pool: usize,
) -> Result<(Tensor, BlockTrace)> {
    let pre = ops::conv2d(input, spec, &p.weight, &p.bias)?;
    let act = ops::relu(&pre);
    let (pooled, argmax) = ops::maxpool2d(&act, pool)?;
    Ok((pooled, BlockTrace { pre_relu: pre, argmax }))
}

/// Returns the input gradient when requested.
fn conv_block_backward(
    input: &Tensor,
    spec: &ConvSpec,
    p: &ConvParams,
    trace: &BlockTrace,
    grad_out: &Tensor,
    grads: &mut ConvParams,
    need_input_grad: bool,
) -> Result<Option<Tensor>> {
    let g_act = ops::maxpool2d_backward(trace.pre_relu.shape(), &trace.argmax, grad_out)?;
    let g_pre = ops::relu_backward(&trace.pre_relu, &g_act);
    let g = ops::conv2d_backward(input, spec, &p.weight, &g_pre, need_input_grad)?;
    add_into(&mut grads.weight, &g.weights);
    add_into(&mut grads.bias, &g.bias);
    Ok(g.input)
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    dst.data_mut()
        .iter_mut()
        .zip(src.data())
        .for_each(|(a, b)| *a += b);
}

// ---------------------------------------------------------------- MTCL

/// `(1, C, W)` → `(P·L, C, W/r)`: every scale's pooled output, concatenated
/// along the filter axis in scale order.
pub fn mtcl_forward(v: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    Ok(mtcl_traced(v, params, cfg)?.0)
}

fn mtcl_traced(v: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<(Tensor, Vec<BlockTrace>)> {
    expect_shape("mtcl_forward", v, &[1, cfg.channels, cfg.input_width()])?;
    let mut data = Vec::with_capacity(cfg.scales * cfg.filters * cfg.channels * cfg.pooled_width());
    let mut traces = Vec::with_capacity(cfg.scales);
    for (i, p) in params.branches.iter().enumerate() {
        let (out, trace) = conv_block(v, &branch_spec(cfg, i), p, cfg.pool)?;
        data.extend_from_slice(out.data());
        traces.push(trace);
    }
    let concat = Tensor::new(&[cfg.scales * cfg.filters, cfg.channels, cfg.pooled_width()], data)?;
    Ok((concat, traces))
}

/// Output of a single scale, for inspection and tests.
pub fn mtcl_branch_forward(v: &Tensor, params: &ModelParams, cfg: &ModelConfig, scale: usize) -> Result<Tensor> {
    let p = params
        .branches
        .get(scale)
        .ok_or_else(|| Error::InvalidArgument(format!("scale {scale} out of range")))?;
    Ok(conv_block(v, &branch_spec(cfg, scale), p, cfg.pool)?.0)
}

// ---------------------------------------------------------------- PCC + fusion

/// `(P·L, C, W/r)` → `(d_w, d_h)`.
pub fn pcc_fuse_forward(c: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    Ok(pcc_traced(c, params, cfg)?.0)
}

fn pcc_traced(c: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<(Tensor, BlockTrace)> {
    expect_shape(
        "pcc_fuse_forward",
        c,
        &[cfg.scales * cfg.filters, cfg.channels, cfg.pooled_width()],
    )?;
    let (pooled, trace) = conv_block(c, &pcc_spec(cfg), &params.pcc, cfg.pool)?;
    let fused = pooled.reshape(&[cfg.d_model(), cfg.seq_len()])?;
    Ok((fused.transpose2()?, trace))
}

// ---------------------------------------------------------------- encoder

#[derive(Debug, Clone)]
struct LayerTrace {
    attention: AttentionCache,
    norm1: LayerNormCache,
    h1: Tensor,
    ff_pre: Tensor,
    ff_act: Tensor,
    mask: Option<Vec<f64>>,
    norm2: LayerNormCache,
}

fn encoder_layer(
    x: &Tensor,
    p: &EncoderLayerParams,
    cfg: &ModelConfig,
    pass: &mut Pass<'_>,
) -> Result<(Tensor, LayerTrace)> {
    let (attn, attention) = ops::multi_head_self_attention(x, cfg.heads, &p.attention)?;
    let mut res1 = attn;
    add_into(&mut res1, x);
    let (h1, norm1) = ops::layer_norm(&res1, &p.norm1.gain, &p.norm1.offset, LAYER_NORM_EPS)?;

    let ff_pre = p.ff1.forward(&h1)?;
    let relu = ops::relu(&ff_pre);
    let mode = pass.mode();
    let (ff_act, mask) = match pass {
        Pass::Train(rng) => ops::dropout(&relu, cfg.dropout, mode, rng)?,
        Pass::Eval => (relu, None),
    };
    let mut res2 = p.ff2.forward(&ff_act)?;
    add_into(&mut res2, &h1);
    let (out, norm2) = ops::layer_norm(&res2, &p.norm2.gain, &p.norm2.offset, LAYER_NORM_EPS)?;
    Ok((
        out,
        LayerTrace {
            attention,
            norm1,
            h1,
            ff_pre,
            ff_act,
            mask,
            norm2,
        },
    ))
}

fn encoder_layer_backward(
    p: &EncoderLayerParams,
    trace: &LayerTrace,
    grad_out: &Tensor,
    grads: &mut EncoderLayerParams,
) -> Result<Tensor> {
    let n2 = ops::layer_norm_backward(&trace.norm2, &p.norm2.gain, grad_out)?;
    add_into(&mut grads.norm2.gain, &n2.gain);
    add_into(&mut grads.norm2.offset, &n2.offset);
    let g_res2 = n2.input;

    let ff2 = ops::linear_backward(&trace.ff_act, &p.ff2.weight, &g_res2)?;
    add_linear(&mut grads.ff2, &ff2.weight, &ff2.bias);
    let g_relu = ops::dropout_backward(&ff2.input, trace.mask.as_deref());
    let g_ff_pre = ops::relu_backward(&trace.ff_pre, &g_relu);
    let ff1 = ops::linear_backward(&trace.h1, &p.ff1.weight, &g_ff_pre)?;
    add_linear(&mut grads.ff1, &ff1.weight, &ff1.bias);
    let mut g_h1 = g_res2;
    add_into(&mut g_h1, &ff1.input);

    let n1 = ops::layer_norm_backward(&trace.norm1, &p.norm1.gain, &g_h1)?;
    add_into(&mut grads.norm1.gain, &n1.gain);
    add_into(&mut grads.norm1.offset, &n1.offset);
    let g_res1 = n1.input;

    let attn = ops::multi_head_self_attention_backward(&trace.attention, &p.attention, &g_res1)?;
    add_attention(&mut grads.attention, &attn.params);
    let mut g_x = g_res1;
    add_into(&mut g_x, &attn.input);
    Ok(g_x)
}

fn add_linear(dst: &mut Linear, w: &Tensor, b: &Tensor) {
    add_into(&mut dst.weight, w);
    add_into(&mut dst.bias, b);
}

fn add_attention(dst: &mut AttentionParams, src: &AttentionParams) {
    add_linear(&mut dst.query, &src.query.weight, &src.query.bias);
    add_linear(&mut dst.key, &src.key.weight, &src.key.bias);
    add_linear(&mut dst.value, &src.value.weight, &src.value.bias);
    add_linear(&mut dst.output, &src.output.weight, &src.output.bias);
}

/// `N` post-norm layers; the output keeps the input shape. `N = 0` returns
/// the input unchanged.
pub fn encoder_forward(seq: &Tensor, params: &ModelParams, cfg: &ModelConfig, mut pass: Pass<'_>) -> Result<Tensor> {
    let mut x = seq.clone();
    for p in &params.encoder {
        x = encoder_layer(&x, p, cfg, &mut pass)?.0;
    }
    Ok(x)
}

// ---------------------------------------------------------------- head

#[derive(Debug, Clone)]
struct HeadTrace {
    pooled: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
}

fn head_logits(enc: &Tensor, params: &ModelParams) -> Result<(Tensor, HeadTrace)> {
    let d = enc.dims2("classify")?[1];
    let pooled = ops::mean_over_axis(enc)?.reshape(&[1, d])?;
    let hidden_pre = params.hidden.forward(&pooled)?;
    let hidden = ops::relu(&hidden_pre);
    let logits = params.output.forward(&hidden)?;
    Ok((
        logits,
        HeadTrace {
            pooled,
            hidden_pre,
            hidden,
        },
    ))
}

/// Temporal mean, hidden layer of `L·C` ReLU units, output layer, softmax.
pub fn classify(enc: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    expect_shape("classify", enc, &[cfg.seq_len(), cfg.d_model()])?;
    let (logits, _) = head_logits(enc, params)?;
    Ok(ops::softmax(&logits.reshape(&[cfg.classes])?))
}

// ---------------------------------------------------------------- full model

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    input: Tensor,
    spatial_out: Option<Vec<usize>>,
    virtual_channels: Tensor,
    branches: Vec<BlockTrace>,
    concat: Tensor,
    pcc: BlockTrace,
    layers: Vec<LayerTrace>,
    encoder_out: Vec<usize>,
    head: HeadTrace,
    /// Raw class scores `[Y]`.
    pub logits: Tensor,
}

/// Intermediate shapes of one forward pass, in chain order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeChain {
    pub spatial_out: Option<Vec<usize>>,
    pub virtual_channels: Vec<usize>,
    pub branch_pre_pool: Vec<Vec<usize>>,
    pub branch_pooled: Vec<Vec<usize>>,
    pub concat: Vec<usize>,
    pub pcc_pre_pool: Vec<usize>,
    pub pcc_pooled: Vec<usize>,
    pub fused: Vec<usize>,
    pub encoder_in: Vec<usize>,
    pub encoder_out: Vec<usize>,
    pub pooled: Vec<usize>,
    pub probabilities: Vec<usize>,
}

impl Trace {
    pub fn shape_chain(&self) -> ShapeChain {
        let pooled_of = |b: &BlockTrace| {
            let s = b.pre_relu.shape();
            vec![s[0], s[1], b.argmax.len() / (s[0] * s[1])]
        };
        let pcc_pooled = pooled_of(&self.pcc);
        let fused = vec![pcc_pooled[0] * pcc_pooled[1], pcc_pooled[2]];
        let encoder_in = vec![fused[1], fused[0]];
        ShapeChain {
            spatial_out: self.spatial_out.clone(),
            virtual_channels: self.virtual_channels.shape().to_vec(),
            branch_pre_pool: self.branches.iter().map(|b| b.pre_relu.shape().to_vec()).collect(),
            branch_pooled: self.branches.iter().map(pooled_of).collect(),
            concat: self.concat.shape().to_vec(),
            pcc_pre_pool: self.pcc.pre_relu.shape().to_vec(),
            pcc_pooled,
            fused,
            encoder_in,
            encoder_out: self.encoder_out.clone(),
            pooled: vec![self.head.pooled.numel()],
            probabilities: vec![self.logits.numel()],
        }
    }

    pub fn probabilities(&self) -> Tensor {
        ops::softmax(&self.logits)
    }
}

/// Runs the full chain and keeps what backward needs.
pub fn forward_traced(input: &Tensor, params: &ModelParams, cfg: &ModelConfig, mut pass: Pass<'_>) -> Result<Trace> {
    let w = cfg.input_width();
    if input.shape() != [cfg.channels, w] {
        return Err(Error::shape(
            "forward",
            "input",
            format!(
                "got {:?}, expected [{}, {w}] (channels × sequence_length·samples_per_epoch)",
                input.shape(),
                cfg.channels
            ),
        ));
    }
    let virtual_channels = spatial_forward(input, params, cfg)?;
    let (concat, branches) = mtcl_traced(&virtual_channels, params, cfg)?;
    let (seq, pcc) = pcc_traced(&concat, params, cfg)?;
    let mut x = seq;
    let mut layers = Vec::with_capacity(params.encoder.len());
    for p in &params.encoder {
        let (y, t) = encoder_layer(&x, p, cfg, &mut pass)?;
        layers.push(t);
        x = y;
    }
    let (logits, head) = head_logits(&x, params)?;
    Ok(Trace {
        input: input.clone(),
        spatial_out: cfg.has_spatial().then(|| vec![cfg.channels, 1, w]),
        virtual_channels,
        branches,
        concat,
        pcc,
        layers,
        encoder_out: x.shape().to_vec(),
        head,
        logits: logits.reshape(&[cfg.classes])?,
    })
}

/// Class probabilities for one input of shape `(C, S·T)`.
pub fn forward(input: &Tensor, params: &ModelParams, cfg: &ModelConfig, pass: Pass<'_>) -> Result<Tensor> {
    Ok(forward_traced(input, params, cfg, pass)?.probabilities())
}

/// Accumulates parameter gradients of a scalar loss into `grads`, given the
/// loss gradient with respect to the logits.
pub fn backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    trace: &Trace,
    grad_logits: &[f64],
    grads: &mut ModelParams,
) -> Result<()> {
    if grad_logits.len() != cfg.classes {
        return Err(Error::shape(
            "backward",
            "grad_logits",
            format!("{} values for {} classes", grad_logits.len(), cfg.classes),
        ));
    }
    // head
    let g_logits = Tensor::new(&[1, cfg.classes], grad_logits.to_vec())?;
    let out = ops::linear_backward(&trace.head.hidden, &params.output.weight, &g_logits)?;
    add_linear(&mut grads.output, &out.weight, &out.bias);
    let g_hidden_pre = ops::relu_backward(&trace.head.hidden_pre, &out.input);
    let hid = ops::linear_backward(&trace.head.pooled, &params.hidden.weight, &g_hidden_pre)?;
    add_linear(&mut grads.hidden, &hid.weight, &hid.bias);
    let g_pooled = hid.input.reshape(&[cfg.d_model()])?;
    let mut g = ops::mean_over_axis_backward(cfg.seq_len(), &g_pooled)?;

    // encoder
    for ((p, t), gp) in params
        .encoder
        .iter()
        .zip(&trace.layers)
        .zip(grads.encoder.iter_mut())
        .rev()
    {
        g = encoder_layer_backward(p, t, &g, gp)?;
    }

    // undo permute + fusion: (d_w, d_h) -> (d_h, d_w) -> (L, C, d_w)
    let g_pcc_out = g.transpose2()?.reshape(&[cfg.filters, cfg.channels, cfg.seq_len()])?;
    let g_concat = conv_block_backward(
        &trace.concat,
        &pcc_spec(cfg),
        &params.pcc,
        &trace.pcc,
        &g_pcc_out,
        &mut grads.pcc,
        true,
    )?
    .expect("input gradient requested");

    // split along filters, one slice per scale
    let need_virtual = params.spatial.is_some();
    let slice = cfg.filters * cfg.channels * cfg.pooled_width();
    let mut g_virtual = need_virtual.then(|| Tensor::zeros(trace.virtual_channels.shape()));
    for (i, (p, t)) in params.branches.iter().zip(&trace.branches).enumerate() {
        let g_branch = Tensor::new(
            &[cfg.filters, cfg.channels, cfg.pooled_width()],
            g_concat.data()[i * slice..(i + 1) * slice].to_vec(),
        )?;
        let gv = conv_block_backward(
            &trace.virtual_channels,
            &branch_spec(cfg, i),
            p,
            t,
            &g_branch,
            &mut grads.branches[i],
            need_virtual,
        )?;
        if let (Some(acc), Some(gv)) = (g_virtual.as_mut(), gv) {
            add_into(acc, &gv);
        }
    }

    if let (Some(p), Some(gs), Some(gv)) = (&params.spatial, grads.spatial.as_mut(), g_virtual) {
        let w = cfg.input_width();
        let g_out = gv.reshape(&[cfg.channels, 1, w])?;
        let x = trace.input.clone().reshape(&[1, cfg.channels, w])?;
        let sg = ops::conv2d_backward(&x, &spatial_spec(cfg), &p.weight, &g_out, false)?;
        add_into(&mut gs.weight, &sg.weights);
        add_into(&mut gs.bias, &sg.bias);
    }
    Ok(())
}
