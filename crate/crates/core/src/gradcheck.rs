//! Central finite-difference checks of every analytic gradient.
//!
//! Each op is reduced to a scalar through a random projection `Σ cᵢ yᵢ`, so
//! the upstream gradient handed to its backward pass is simply `c`.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::loss::{log_scaled_weights, weighted_cross_entropy};
use crate::model::{backward, forward_traced, ModelConfig, ModelParams, Pass};
use crate::ops::{self, AttentionParams, ConvSpec, Linear, Mode, Padding};
use crate::rng::{derive_seed, seeded, Rng};
use crate::tensor::Tensor;

/// Pass threshold on the max relative error.
pub const THRESHOLD: f64 = 1e-4;

/// Every differentiable op, in report order.
pub const OPS: [&str; 10] = [
    "conv2d",
    "maxpool2d",
    "relu",
    "softmax",
    "layer_norm",
    "linear",
    "dropout",
    "multi_head_self_attention",
    "mean_over_axis",
    "weighted_cross_entropy",
];

/// Name used for the whole-model row of a report.
pub const END_TO_END: &str = "end_to_end";

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares `analytic` against central differences of `f` around `point` on
/// the given coordinates (all when `None`) and returns the max relative error.
pub fn grad_check<F>(mut f: F, point: &[f64], analytic: &[f64], eps: f64, coords: Option<&[usize]>) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if analytic.len() != point.len() {
        return Err(Error::shape(
            "grad_check",
            "analytic",
            alloc::format!("{} gradient entries for {} coordinates", analytic.len(), point.len()),
        ));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut x = point.to_vec();
    let mut worst = 0f64;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x)?;
        x[i] = orig - eps;
        let down = f(&x)?;
        x[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Random points per op.
    pub points: usize,
    pub eps: f64,
    /// Parameters sampled for the whole-model check.
    pub model_coords: usize,
    /// Whole-model points.
    pub model_points: usize,
    /// Test hook: perturb the analytic gradient of the named op (or
    /// `end_to_end`) so the check must fail.
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            points: 20,
            eps: 1e-5,
            model_coords: 100,
            model_points: 2,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub points: usize,
    pub coords: usize,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= THRESHOLD
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub ops: Vec<OpReport>,
    pub end_to_end: OpReport,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(OpReport::passed) && self.end_to_end.passed()
    }

    pub fn rows(&self) -> impl Iterator<Item = &OpReport> {
        self.ops.iter().chain(core::iter::once(&self.end_to_end))
    }
}

/// The small model used for the whole-model check.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        channels: 2,
        samples_per_epoch: 144,
        scales: 3,
        filters: 2,
        base_kernel: 5,
        pool: 3,
        encoder_layers: 2,
        heads: 4,
        ff_width: 8,
        dropout: 0.25,
        sequence_length: 1,
        classes: 5,
    }
}

pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let ops = OPS
        .iter()
        .map(|name| check_op(name, opts))
        .collect::<Result<Vec<_>>>()?;
    let end_to_end = check_model(&tiny_config(), opts)?;
    Ok(GradcheckReport { ops, end_to_end })
}

// ---------------------------------------------------------------- problems

/// Loss value and, on request, its analytic gradient at a flat point.
type Eval = Box<dyn Fn(&[f64], bool) -> Result<(f64, Vec<f64>)>>;

struct Problem {
    point: Vec<f64>,
    eval: Eval,
}

fn uniform(rng: &mut Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Values bounded away from zero so ReLU kinks stay out of reach.
fn away_from_zero(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn project(y: &Tensor, c: &[f64]) -> f64 {
    y.data().iter().zip(c).map(|(a, b)| a * b).sum()
}

fn split<'a>(x: &'a [f64], sizes: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for &s in sizes {
        out.push(&x[at..at + s]);
        at += s;
    }
    out
}

fn t(shape: &[usize], data: &[f64]) -> Result<Tensor> {
    Tensor::new(shape, data.to_vec())
}

fn concat(parts: &[&Tensor]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.data().iter().copied()).collect()
}

fn problem(name: &str, rng: &mut Rng) -> Result<Problem> {
    let p = match name {
        "conv2d" => {
            let spec = ConvSpec::new(3, (2, 3)).with_padding(Padding::same_width(3));
            let (xs, ws) = ([2, 3, 8], [3, 2, 2, 3]);
            let sizes = [48, 36, 3];
            let c = uniform(rng, 3 * 2 * 8, 1.0);
            let point = uniform(rng, sizes.iter().sum(), 1.0);
            Problem {
                point,
                eval: Box::new(move |x, need| {
                    let p = split(x, &sizes);
                    let (input, w, b) = (t(&xs, p[0])?, t(&ws, p[1])?, t(&[3], p[2])?);
                    let y = ops::conv2d(&input, &spec, &w, &b)?;
                    let grad = if need {
                        let g = ops::conv2d_backward(&input, &spec, &w, &t(y.shape(), &c)?, true)?;
                        concat(&[g.input.as_ref().expect("requested"), &g.weights, &g.bias])
                    } else {
                        Vec::new()
                    };
                    Ok((project(&y, &c), grad))
                }),
            }
        }
        "maxpool2d" => {
            // Distinct values spaced 0.05 apart keep every window free of ties.
            let mut point: Vec<f64> = (0..36).map(|i| i as f64 * 0.05 - 0.9).collect();
            point.shuffle(rng);
            let c = uniform(rng, 12, 1.0);
            Problem {
                point,
                eval: Box::new(move |x, need| {
                    let input = t(&[2, 2, 9], x)?;
                    let (y, argmax) = ops::maxpool2d(&input, 3)?;
                    let grad = if need {
                        ops::maxpool2d_backward(input.shape(), &argmax, &t(y.shape(), &c)?)?.into_data()
                    } else {
                        Vec::new()
                    };
                    Ok((project(&y, &c), grad))
                }),
            }
        }
        "relu" => {
            let point = away_from_zero(rng, 24);
            let c = uniform(rng, 24, 1.0);
            Problem {
                point,
                eval: Box::new(move |x, need| {
                    let input = t(&[4, 6], x)?;
                    let y = ops::relu(&input);
                    let grad = if need {
                        ops::relu_backward(&input, &t(&[4, 6], &c)?).into_data()
                    } else {
                        Vec::new()
                    };
                    Ok((project(&y, &c), grad))
                }),
            }
        }
        "softmax" => {
            let point = uniform(rng, 15, 2.0);
            let c = uniform(rng, 15, 1.0);
            Problem {
                point,
                eval: Box::new(move |x, need| {
                    let y = ops::softmax(&t(&[3, 5], x)?);
                    let grad = if need {
                        ops::softmax_backward(&y, &t(&[3, 5], &c)?).into_data()
                    } else {
                        Vec::new()
                    };
                    Ok((project(&y, &c), grad))
                }),
            }
        }
        "layer_norm" => {
            let sizes = [18, 6, 6];
            let point = uniform(rng, 30, 1.0);
            let c = uniform(rng, 18, 1.0);
            Problem {
                point,
                eval: Box::new(move |x, need| {
                    let p = split(x, &sizes);
                    let (input, gain, offset) = (t(&[3, 6], p[0])?, t(&[6], p[1])?, t(&[6], p[2])?);
                    let (y, cache) = ops::layer_norm(&input, &gain, &offset, ops::LAYER_NORM_EPS)?;
                    let grad = if need {
                        let g = ops::layer_norm_backward(&cache, &gain, &t(&[3, 6], &c)?)?;
                        concat(&[&g.input, &g.gain, &g.offset])
                    } else {
                        Vec::new()
                    };
                    Ok((project(&y, &c), grad))
                }),
            }
        }
        "linear" => {
            let sizes = [12, 20, 5];
            let point = uniform(rng, 37, 1.0);
            let c = uniform(rng, 15, 1.0);
            Problem {
                point,
                eval: Box::new(move |x, need| {
                    let p = split(x, &sizes);
                    let (input, w, b) = (t(&[3, 4], p[0])?, t(&[4, 5], p[1])?, t(&[5], p[2])?);
                    let y = ops::linear(&input, &w, &b)?;
                    let grad = if need {
                        let g = ops::linear_backward(&input, &w, &t(&[3, 5], &c)?)?;
                        concat(&[&g.input, &g.weight, &g.bias])
                    } else {
                        Vec::new()
                    };
                    Ok((project(&y, &c), grad))
                }),
            }
        }
        "dropout" => {
            let point = uniform(rng, 24, 1.0);
            let c = uniform(rng, 24, 1.0);
            let mask_seed: u64 = rng.random();
            Problem {
                point,
                eval: Box::new(move |x, need| {
                    let input = t(&[4, 6], x)?;
                    let (y, mask) = ops::dropout(&input, 0.25, Mode::Train, &mut seeded(mask_seed))?;
                    let grad = if need {
                        ops::dropout_backward(&t(&[4, 6], &c)?, mask.as_deref()).into_data()
                    } else {
                        Vec::new()
                    };
                    Ok((project(&y, &c), grad))
                }),
            }
        }
        "multi_head_self_attention" => {
            let (s, d, heads) = (5, 8, 2);
            let mut sizes = vec![s * d];
            for _ in 0..4 {
                sizes.extend([d * d, d]);
            }
            let point = uniform(rng, sizes.iter().sum(), 1.0);
            let c = uniform(rng, s * d, 1.0);
            Problem {
                point,
                eval: Box::new(move |x, need| {
                    let p = split(x, &sizes);
                    let lin = |i: usize| -> Result<Linear> {
                        Ok(Linear {
                            weight: t(&[d, d], p[1 + 2 * i])?,
                            bias: t(&[d], p[2 + 2 * i])?,
                        })
                    };
                    let params = AttentionParams {
                        query: lin(0)?,
                        key: lin(1)?,
                        value: lin(2)?,
                        output: lin(3)?,
                    };
                    let input = t(&[s, d], p[0])?;
                    let (y, cache) = ops::multi_head_self_attention(&input, heads, &params)?;
                    let grad = if need {
                        let g = ops::multi_head_self_attention_backward(&cache, &params, &t(&[s, d], &c)?)?;
                        let gp = &g.params;
                        concat(&[
                            &g.input,
                            &gp.query.weight,
                            &gp.query.bias,
                            &gp.key.weight,
                            &gp.key.bias,
                            &gp.value.weight,
                            &gp.value.bias,
                            &gp.output.weight,
                            &gp.output.bias,
                        ])
                    } else {
                        Vec::new()
                    };
                    Ok((project(&y, &c), grad))
                }),
            }
        }
        "mean_over_axis" => {
            let point = uniform(rng, 24, 1.0);
            let c = uniform(rng, 6, 1.0);
            Problem {
                point,
                eval: Box::new(move |x, need| {
                    let y = ops::mean_over_axis(&t(&[4, 6], x)?)?;
                    let grad = if need {
                        ops::mean_over_axis_backward(4, &t(&[6], &c)?)?.into_data()
                    } else {
                        Vec::new()
                    };
                    Ok((project(&y, &c), grad))
                }),
            }
        }
        "weighted_cross_entropy" => {
            let point = uniform(rng, 20, 2.0);
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
            let weights = log_scaled_weights(&[50, 10, 25, 10, 5], 100)?;
            Problem {
                point,
                eval: Box::new(move |x, _| {
                    let out = weighted_cross_entropy(&t(&[4, 5], x)?, &labels, &weights)?;
                    Ok((out.loss, out.grad.into_data()))
                }),
            }
        }
        other => return Err(Error::InvalidArgument(alloc::format!("unknown op `{other}`"))),
    };
    Ok(p)
}

fn corrupt(grad: &mut [f64]) {
    if let Some(g) = grad.first_mut() {
        *g = *g * 1.5 + 0.1;
    }
}

fn is_corrupted(opts: &GradcheckOptions, name: &str) -> bool {
    opts.corrupt.as_deref() == Some(name)
}

/// Checks one op from [`OPS`] at `opts.points` random points.
pub fn check_op(name: &str, opts: &GradcheckOptions) -> Result<OpReport> {
    let name = OPS
        .iter()
        .copied()
        .find(|&n| n == name)
        .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown op `{name}`")))?;
    let index = OPS.iter().position(|&n| n == name).unwrap_or(0) as u64;
    let mut worst = 0f64;
    let mut coords = 0;
    for k in 0..opts.points {
        let mut rng = seeded(derive_seed(opts.seed, &[index, k as u64]));
        let p = problem(name, &mut rng)?;
        let (_, mut grad) = (p.eval)(&p.point, true)?;
        if is_corrupted(opts, name) {
            corrupt(&mut grad);
        }
        coords = p.point.len();
        let err = grad_check(|x| Ok((p.eval)(x, false)?.0), &p.point, &grad, opts.eps, None)?;
        worst = worst.max(err);
    }
    Ok(OpReport {
        name,
        max_rel_error: worst,
        points: opts.points,
        coords,
    })
}

/// Weighted cross-entropy of the model over a small batch, with dropout
/// masks replayed from fixed seeds so the loss is a deterministic function
/// of the parameters.
fn model_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    inputs: &[Tensor],
    labels: &[usize],
    weights: &[f64],
    mask_seed: u64,
    grads: Option<&mut ModelParams>,
) -> Result<f64> {
    let mut traces = Vec::with_capacity(inputs.len());
    let mut logits = Vec::with_capacity(inputs.len() * cfg.classes);
    for (i, x) in inputs.iter().enumerate() {
        let mut rng = seeded(derive_seed(mask_seed, &[i as u64]));
        let trace = forward_traced(x, params, cfg, Pass::Train(&mut rng))?;
        logits.extend_from_slice(trace.logits.data());
        traces.push(trace);
    }
    let out = weighted_cross_entropy(&Tensor::new(&[inputs.len(), cfg.classes], logits)?, labels, weights)?;
    if let Some(grads) = grads {
        for (trace, g) in traces.iter().zip(out.grad.data().chunks(cfg.classes)) {
            backward(params, cfg, trace, g, grads)?;
        }
    }
    Ok(out.loss)
}

/// Whole-model loss gradient against finite differences on a random subset
/// of parameters.
pub fn check_model(cfg: &ModelConfig, opts: &GradcheckOptions) -> Result<OpReport> {
    cfg.validate()?;
    let weights = log_scaled_weights(&[50, 10, 25, 10, 5], 100)?;
    let mut worst = 0f64;
    let mut coords = 0;
    for k in 0..opts.model_points {
        let mut rng = seeded(derive_seed(opts.seed, &[u64::MAX, k as u64]));
        let params = ModelParams::init(cfg, rng.random())?;
        let inputs: Vec<Tensor> = (0..3)
            .map(|_| Tensor::uniform(&[cfg.channels, cfg.input_width()], 1.0, &mut rng))
            .collect();
        let labels: Vec<usize> = (0..inputs.len()).map(|_| rng.random_range(0..cfg.classes)).collect();
        let mask_seed: u64 = rng.random();

        let mut grads = ModelParams::zeros(cfg);
        model_loss(&params, cfg, &inputs, &labels, &weights, mask_seed, Some(&mut grads))?;
        let mut analytic = grads.flatten();
        if is_corrupted(opts, END_TO_END) {
            corrupt(&mut analytic);
        }
        let point = params.flatten();
        let n = opts.model_coords.min(point.len());
        let mut picked = rand::seq::index::sample(&mut rng, point.len(), n).into_vec();
        if is_corrupted(opts, END_TO_END) && !picked.contains(&0) {
            picked[0] = 0;
        }
        coords = n;
        let mut probe = params.clone();
        let err = grad_check(
            |x| {
                probe.load_flat(x)?;
                model_loss(&probe, cfg, &inputs, &labels, &weights, mask_seed, None)
            },
            &point,
            &analytic,
            opts.eps,
            Some(&picked),
        )?;
        worst = worst.max(err);
    }
    Ok(OpReport {
        name: END_TO_END,
        max_rel_error: worst,
        points: opts.model_points,
        coords,
    })
}


#[cfg(test)]
mod model_tests {
    use super::*;

    #[test]
    fn tiny_model_end_to_end() {
        let r = check_model(&tiny_config(), &GradcheckOptions::default()).unwrap();
        assert_eq!(r.coords, 100);
        assert!(r.passed(), "{}", r.max_rel_error);
    }

    #[test]
    fn corrupted_model_gradient_is_caught() {
        let opts = GradcheckOptions {
            corrupt: Some(END_TO_END.into()),
            model_points: 1,
            ..GradcheckOptions::default()
        };
        assert!(!check_model(&tiny_config(), &opts).unwrap().passed());
    }
}
