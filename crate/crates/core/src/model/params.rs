use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::ops::{AttentionParams, Linear, LayerNormParams};
use crate::rng::{seeded, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    fn init(filters: usize, cin: usize, kh: usize, kw: usize, rng: &mut Rng) -> Self {
        let receptive = kh * kw;
        Self {
            weight: Tensor::glorot(&[filters, cin, kh, kw], cin * receptive, filters * receptive, rng),
            bias: Tensor::zeros(&[filters]),
        }
    }

    fn zeros(filters: usize, cin: usize, kh: usize, kw: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[filters, cin, kh, kw]),
            bias: Tensor::zeros(&[filters]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub attention: AttentionParams,
    pub norm1: LayerNormParams,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Present only for multichannel input.
    pub spatial: Option<ConvParams>,
    pub branches: Vec<ConvParams>,
    pub pcc: ConvParams,
    pub encoder: Vec<EncoderLayerParams>,
    pub hidden: Linear,
    pub output: Linear,
}

/// Whether weight decay applies to a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

macro_rules! visit_all {
    ($params:expr, $f:expr, $iter:ident, $($m:ident)?) => {{
        let p = $params;
        let f = $f;
        if let Some(s) = & $($m)? p.spatial {
            f("spatial.weight".into(), ParamKind::Weight, & $($m)? s.weight);
            f("spatial.bias".into(), ParamKind::Bias, & $($m)? s.bias);
        }
        for (i, b) in p.branches.$iter().enumerate() {
            f(format!("mtcl.{i}.weight"), ParamKind::Weight, & $($m)? b.weight);
            f(format!("mtcl.{i}.bias"), ParamKind::Bias, & $($m)? b.bias);
        }
        f("pcc.weight".into(), ParamKind::Weight, & $($m)? p.pcc.weight);
        f("pcc.bias".into(), ParamKind::Bias, & $($m)? p.pcc.bias);
        for (i, l) in p.encoder.$iter().enumerate() {
            let a = & $($m)? l.attention;
            for (tag, lin) in [("q", & $($m)? a.query), ("k", & $($m)? a.key), ("v", & $($m)? a.value), ("o", & $($m)? a.output)] {
                f(format!("encoder.{i}.attn.{tag}.weight"), ParamKind::Weight, & $($m)? lin.weight);
                f(format!("encoder.{i}.attn.{tag}.bias"), ParamKind::Bias, & $($m)? lin.bias);
            }
            f(format!("encoder.{i}.norm1.gain"), ParamKind::Norm, & $($m)? l.norm1.gain);
            f(format!("encoder.{i}.norm1.offset"), ParamKind::Norm, & $($m)? l.norm1.offset);
            f(format!("encoder.{i}.ff1.weight"), ParamKind::Weight, & $($m)? l.ff1.weight);
            f(format!("encoder.{i}.ff1.bias"), ParamKind::Bias, & $($m)? l.ff1.bias);
            f(format!("encoder.{i}.ff2.weight"), ParamKind::Weight, & $($m)? l.ff2.weight);
            f(format!("encoder.{i}.ff2.bias"), ParamKind::Bias, & $($m)? l.ff2.bias);
            f(format!("encoder.{i}.norm2.gain"), ParamKind::Norm, & $($m)? l.norm2.gain);
            f(format!("encoder.{i}.norm2.offset"), ParamKind::Norm, & $($m)? l.norm2.offset);
        }
        f("head.hidden.weight".into(), ParamKind::Weight, & $($m)? p.hidden.weight);
        f("head.hidden.bias".into(), ParamKind::Bias, & $($m)? p.hidden.bias);
        f("head.output.weight".into(), ParamKind::Weight, & $($m)? p.output.weight);
        f("head.output.bias".into(), ParamKind::Bias, & $($m)? p.output.bias);
    }};
}

impl ModelParams {
    /// Allocates and seeds every parameter for `cfg`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(seed);
        Ok(Self::build(cfg, &mut rng))
    }

    /// Same shapes as [`ModelParams::init`], all zeros. Used as a gradient
    /// accumulator.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model();
        let l = cfg.filters;
        let c = cfg.channels;
        Self {
            spatial: cfg.has_spatial().then(|| ConvParams::zeros(c, 1, c, 1)),
            branches: (0..cfg.scales)
                .map(|i| ConvParams::zeros(l, 1, 1, cfg.kernel_width(i)))
                .collect(),
            pcc: ConvParams::zeros(l, cfg.scales * l, 1, cfg.base_kernel),
            encoder: (0..cfg.encoder_layers)
                .map(|_| EncoderLayerParams {
                    attention: AttentionParams::zeros(d),
                    norm1: LayerNormParams {
                        gain: Tensor::zeros(&[d]),
                        offset: Tensor::zeros(&[d]),
                    },
                    ff1: Linear::zeros(d, cfg.ff_width),
                    ff2: Linear::zeros(cfg.ff_width, d),
                    norm2: LayerNormParams {
                        gain: Tensor::zeros(&[d]),
                        offset: Tensor::zeros(&[d]),
                    },
                })
                .collect(),
            hidden: Linear::zeros(d, d),
            output: Linear::zeros(d, cfg.classes),
        }
    }

    fn build(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let d = cfg.d_model();
        let l = cfg.filters;
        let c = cfg.channels;
        let spatial = cfg.has_spatial().then(|| ConvParams::init(c, 1, c, 1, rng));
        let branches = (0..cfg.scales)
            .map(|i| ConvParams::init(l, 1, 1, cfg.kernel_width(i), rng))
            .collect();
        let pcc = ConvParams::init(l, cfg.scales * l, 1, cfg.base_kernel, rng);
        let encoder = (0..cfg.encoder_layers)
            .map(|_| EncoderLayerParams {
                attention: AttentionParams::init(d, rng),
                norm1: LayerNormParams::new(d),
                ff1: Linear::init(d, cfg.ff_width, rng),
                ff2: Linear::init(cfg.ff_width, d, rng),
                norm2: LayerNormParams::new(d),
            })
            .collect();
        Self {
            spatial,
            branches,
            pcc,
            encoder,
            hidden: Linear::init(d, d, rng),
            output: Linear::init(d, cfg.classes, rng),
        }
    }

    /// Visits every tensor in registry order.
    pub fn visit<'a>(&'a self, mut f: impl FnMut(String, ParamKind, &'a Tensor)) {
        visit_all!(self, &mut f, iter,);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(String, ParamKind, &mut Tensor)) {
        visit_all!(self, &mut f, iter_mut, mut);
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        self.visit(|_, _, t| out.push(t));
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(|n, _, _| out.push(n));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Concatenation of every tensor in registry order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(|_, _, t| out.extend_from_slice(t.data()));
        out
    }

    /// Inverse of [`ModelParams::flatten`].
    pub fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if values.len() != expected {
            return Err(Error::shape(
                "load_flat",
                "length",
                format!("expected {expected} values, got {}", values.len()),
            ));
        }
        let mut offset = 0;
        self.visit_mut(|_, _, t| {
            let n = t.numel();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        });
        Ok(())
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &ModelParams) {
        let others = other.tensors();
        let mut i = 0;
        self.visit_mut(|_, _, t| {
            t.data_mut()
                .iter_mut()
                .zip(others[i].data())
                .for_each(|(a, b)| *a += b);
            i += 1;
        });
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Closed-form count of trainable scalars for `cfg`.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let c = cfg.channels;
    let l = cfg.filters;
    let d = cfg.d_model();
    let linear = |i: usize, o: usize| i * o + o;
    let spatial = if cfg.has_spatial() { c * c + c } else { 0 };
    let branches: usize = (0..cfg.scales).map(|i| l * cfg.kernel_width(i) + l).sum();
    let pcc = l * cfg.scales * l * cfg.base_kernel + l;
    let layer = 4 * linear(d, d) + linear(d, cfg.ff_width) + linear(cfg.ff_width, d) + 4 * d;
    spatial + branches + pcc + cfg.encoder_layers * layer + linear(d, d) + linear(d, cfg.classes)
}
