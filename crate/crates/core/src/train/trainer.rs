//! Mini-batch training with validation-driven early stopping, and
//! evaluation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::loss::{cross_entropy_row, cross_entropy_row_grad, ClassWeights, WeightScheme};
use crate::metrics::EvalReport;
use crate::model::{backward, forward_traced, ModelConfig, ModelParams, Pass};
use crate::rng::{derive_seed, seeded};
use crate::signal::EpochRecord;
use crate::stage::Stage;

/// Samples per unit of parallel work. Fixed so that the reduction order,
/// and therefore every result, is independent of the thread count.
const CHUNK: usize = 8;

const SHUFFLE_STREAM: u64 = 0x5f;
const DROPOUT_STREAM: u64 = 0xd7;
const INIT_STREAM: u64 = 0x1b;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub train_batch: usize,
    pub val_batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub scheme: WeightScheme,
    /// Folds for subject-wise cross-validation.
    pub folds: usize,
    pub sequence_length: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            train_batch: 512,
            val_batch: 256,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            scheme: WeightScheme::LogScaled,
            folds: 20,
            sequence_length: 1,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("eps", self.eps),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, format!("must lie in [0, 1), got {b}")));
            }
        }
        if self.train_batch == 0 {
            return Err(Error::config("train_batch", "must be positive"));
        }
        if self.val_batch == 0 {
            return Err(Error::config("val_batch", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be positive"));
        }
        if self.folds < 2 {
            return Err(Error::config("folds", "k must be at least 2"));
        }
        if !(1..=5).contains(&self.sequence_length) {
            return Err(Error::config("sequence_length", "must lie in 1..=5"));
        }
        Ok(())
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
    pub val_kappa: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Ran all `max_epochs`.
    Completed,
    /// Validation loss stopped improving for `patience` epochs.
    EarlyStopped,
    /// The loss or a gradient became non-finite; the best parameters seen
    /// so far are kept.
    Diverged,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss.
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    /// 1-based epoch of `params`; 0 when no epoch completed.
    pub best_epoch: usize,
    pub status: StopReason,
    pub weights: ClassWeights,
    /// Why training diverged, when it did.
    pub failure: Option<String>,
}

fn check_inputs(epochs: &[EpochRecord], cfg: &ModelConfig, what: &'static str) -> Result<()> {
    if epochs.is_empty() {
        return Err(Error::Empty(what));
    }
    let w = cfg.input_width();
    if let Some(e) = epochs.iter().find(|e| e.channels != cfg.channels || e.width() != w) {
        return Err(Error::shape(
            "train",
            "input",
            format!(
                "epoch {}/{} has {} channels × {} samples, model expects {} × {w}",
                e.subject_id,
                e.epoch_index,
                e.channels,
                e.width(),
                cfg.channels
            ),
        ));
    }
    Ok(())
}

fn decay_mask(params: &ModelParams) -> Vec<bool> {
    let mut mask = Vec::with_capacity(params.param_count());
    params.visit(|_, kind, t| mask.extend(core::iter::repeat_n(kind.decays(), t.numel())));
    mask
}

#[cfg(feature = "parallel")]
fn map_chunks<T, F>(items: &[usize], chunk: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &[usize]) -> Result<T> + Sync,
{
    use rayon::prelude::*;
    items
        .par_chunks(chunk)
        .enumerate()
        .map(|(i, c)| f(i * chunk, c))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn map_chunks<T, F>(items: &[usize], chunk: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(usize, &[usize]) -> Result<T>,
{
    items.chunks(chunk).enumerate().map(|(i, c)| f(i * chunk, c)).collect()
}

struct ChunkGrad {
    loss: f64,
    grads: ModelParams,
}

/// Loss `(1/n)·Σ wᵢ·CEᵢ` over the batch and its parameter gradient. Each
/// chunk handles its samples independently; chunk results are summed in
/// order.
fn batch_gradient(
    params: &ModelParams,
    cfg: &ModelConfig,
    data: &[EpochRecord],
    batch: &[usize],
    weights: &[f64],
    dropout_seed: u64,
    offset: usize,
) -> Result<(f64, ModelParams)> {
    let n = batch.len() as f64;
    let parts = map_chunks(batch, CHUNK, |start, idx| {
        let mut grads = ModelParams::zeros(cfg);
        let mut loss = 0.0;
        let mut g = vec![0.0; cfg.classes];
        for (k, &i) in idx.iter().enumerate() {
            let e = &data[i];
            let x = e.to_tensor()?;
            let mut rng = seeded(derive_seed(dropout_seed, &[(offset + start + k) as u64]));
            let trace = forward_traced(&x, params, cfg, Pass::Train(&mut rng))?;
            let label = e.label.index();
            let w = weights[label];
            loss += w * cross_entropy_row(trace.logits.data(), label);
            cross_entropy_row_grad(trace.logits.data(), label, w / n, &mut g);
            backward(params, cfg, &trace, &g, &mut grads)?;
        }
        Ok(ChunkGrad { loss, grads })
    })?;
    let mut iter = parts.into_iter();
    let first = iter.next().ok_or(Error::Empty("batch_gradient: empty batch"))?;
    let mut loss = first.loss;
    let mut grads = first.grads;
    for p in iter {
        loss += p.loss;
        grads.add_assign(&p.grads);
    }
    Ok((loss / n, grads))
}

/// Eval-mode class probabilities for every epoch, in input order.
pub fn predict_proba(params: &ModelParams, cfg: &ModelConfig, data: &[EpochRecord], chunk: usize) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let parts = map_chunks(&idx, chunk.max(1), |_, c| {
        c.iter()
            .map(|&i| {
                let t = forward_traced(&data[i].to_tensor()?, params, cfg, Pass::Eval)?;
                Ok(t.probabilities().into_data())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(parts.into_iter().flatten().collect())
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn weighted_loss(probs: &[Vec<f64>], data: &[EpochRecord], weights: &[f64]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(data)
        .map(|(p, e)| {
            let l = e.label.index();
            -weights[l] * crate::math::ln(p[l].max(f64::MIN_POSITIVE))
        })
        .sum();
    total / data.len() as f64
}

/// Trains from a seeded initialisation. Class weights come from `train`
/// only.
pub fn train(
    train: &[EpochRecord],
    val: &[EpochRecord],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let init = ModelParams::init(model_cfg, derive_seed(cfg.seed, &[INIT_STREAM]))?;
    train_from(init, train, val, model_cfg, cfg)
}

pub fn train_from(
    mut params: ModelParams,
    train: &[EpochRecord],
    val: &[EpochRecord],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    cfg.validate()?;
    if cfg.sequence_length != model_cfg.sequence_length {
        return Err(Error::config(
            "sequence_length",
            format!(
                "training uses {} but the model is built for {}",
                cfg.sequence_length, model_cfg.sequence_length
            ),
        ));
    }
    check_inputs(train, model_cfg, "train: empty training split")?;
    check_inputs(val, model_cfg, "train: empty validation split")?;

    let labels: Vec<usize> = train.iter().map(|e| e.label.index()).collect();
    let weights = ClassWeights::from_labels(&labels, model_cfg.classes, cfg.scheme)?;
    let adam = cfg.adam();
    let mask = decay_mask(&params);
    let mut state = OptimizerState::new(mask.len());
    let mut flat = params.flatten();

    let mut history = Vec::new();
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut status = StopReason::Completed;
    let mut failure = None;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seeded(derive_seed(cfg.seed, &[SHUFFLE_STREAM, epoch as u64])));
        let dropout_seed = derive_seed(cfg.seed, &[DROPOUT_STREAM, epoch as u64]);

        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.train_batch).enumerate() {
            let offset = b * cfg.train_batch;
            let (loss, grads) = batch_gradient(&params, model_cfg, train, batch, &weights.weights, dropout_seed, offset)?;
            if !loss.is_finite() {
                status = StopReason::Diverged;
                failure = Some(format!("training loss became {loss} in epoch {epoch}, batch {}", b + 1));
                break 'epochs;
            }
            if let Err(e) = adam_step(&mut flat, &grads.flatten(), &mask, &mut state, &adam) {
                status = StopReason::Diverged;
                failure = Some(format!("epoch {epoch}, batch {}: {e}", b + 1));
                break 'epochs;
            }
            params.load_flat(&flat)?;
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;

        let probs = predict_proba(&params, model_cfg, val, cfg.val_batch)?;
        let val_loss = weighted_loss(&probs, val, &weights.weights);
        let truth: Vec<usize> = val.iter().map(|e| e.label.index()).collect();
        let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        let report = EvalReport::from_labels(&truth, &pred, model_cfg.classes)?;
        log::info!(
            "epoch {epoch}: train loss {train_loss:.4}, val loss {val_loss:.4}, val acc {:.4}, val mF1 {:.4}",
            report.accuracy,
            report.macro_f1
        );
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_accuracy: report.accuracy,
            val_macro_f1: report.macro_f1,
            val_kappa: report.kappa,
        });
        if !val_loss.is_finite() || !params.is_finite() {
            status = StopReason::Diverged;
            failure = Some(format!("validation loss became {val_loss} in epoch {epoch}"));
            break;
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            best = params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                status = StopReason::EarlyStopped;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: best,
        history,
        best_epoch,
        status,
        weights,
        failure,
    })
}

/// One evaluated epoch, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_id: String,
    pub epoch_index: u32,
    pub truth: Stage,
    pub predicted: Stage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub predictions: Vec<Prediction>,
}

impl Evaluation {
    /// Predictions grouped by subject, each group in epoch order.
    pub fn hypnograms(&self) -> Vec<(String, Vec<Prediction>)> {
        let mut groups: alloc::collections::BTreeMap<String, Vec<Prediction>> = Default::default();
        for p in &self.predictions {
            groups.entry(p.subject_id.clone()).or_default().push(p.clone());
        }
        groups
            .into_iter()
            .map(|(k, mut v)| {
                v.sort_by_key(|p| p.epoch_index);
                (k, v)
            })
            .collect()
    }
}

pub fn evaluate(params: &ModelParams, data: &[EpochRecord], cfg: &ModelConfig) -> Result<Evaluation> {
    check_inputs(data, cfg, "evaluate: empty test set")?;
    let probs = predict_proba(params, cfg, data, CHUNK)?;
    let predictions: Vec<Prediction> = probs
        .iter()
        .zip(data)
        .map(|(p, e)| Prediction {
            subject_id: e.subject_id.clone(),
            epoch_index: e.epoch_index,
            truth: e.label,
            predicted: Stage::from_index(argmax(p)).unwrap_or(Stage::W),
        })
        .collect();
    let truth: Vec<usize> = predictions.iter().map(|p| p.truth.index()).collect();
    let pred: Vec<usize> = predictions.iter().map(|p| p.predicted.index()).collect();
    let report = EvalReport::from_labels(&truth, &pred, cfg.classes)?;
    Ok(Evaluation { report, predictions })
}
