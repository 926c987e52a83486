use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{backward, dropout_masks, forward_cached, loss, Gradients};
use super::{GruConfig, GruWeights, Precision, Scalar, TrainingSet, WeightsDocument};
use crate::error::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Sequences per parallel work unit; partial sums are combined in order.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// 1-based epoch whose weights were kept; 0 when no epoch ran.
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub weights: GruWeights<T>,
    pub history: TrainingHistory,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = seed ^ 0x9e3779b97f4a7c15;
    for v in [a, b] {
        h = (h ^ v).wrapping_mul(0xbf58476d1ce4e5b9);
        h ^= h >> 31;
    }
    h
}

fn window<T: Scalar>(set: &TrainingSet, i: usize) -> Vec<T> {
    set.window(i).iter().map(|v| T::lit(*v)).collect()
}

/// Eval-mode predictions for every window of `set`.
pub fn predict<T: Scalar>(weights: &GruWeights<T>, config: &GruConfig, set: &TrainingSet) -> Result<Vec<f64>> {
    check_set(weights, config, set)?;
    Ok((0..set.len())
        .into_par_iter()
        .map(|i| {
            let seq = window::<T>(set, i);
            let (y, _) = forward_cached(weights, config.activation, &seq, config.sequence_length, None);
            y.to_f64().unwrap_or(f64::NAN)
        })
        .collect())
}

fn check_set<T: Scalar>(weights: &GruWeights<T>, config: &GruConfig, set: &TrainingSet) -> Result<()> {
    if set.sequence_length() != config.sequence_length || set.input_dim() != weights.input_dim() {
        return Err(Error::Shape(format!(
            "data windows are {} x {}, network expects {} x {}",
            set.sequence_length(),
            set.input_dim(),
            config.sequence_length,
            weights.input_dim()
        )));
    }
    Ok(())
}

/// Sum of squared errors and the gradient of `sum (y - target)^2 * scale`
/// over `indices`. Dropout masks are drawn per sequence from a seed derived
/// from `(seed, epoch, index)` when `dropout` is set.
fn batch_terms<T: Scalar>(
    w: &GruWeights<T>,
    config: &GruConfig,
    set: &TrainingSet,
    indices: &[usize],
    scale: T,
    dropout: Option<u64>,
) -> (f64, Gradients<T>) {
    let parts: Vec<(f64, Gradients<T>)> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = GruWeights::zeros(w.input_dim(), &w.layer_sizes());
            let mut sq = 0.0;
            for &i in chunk {
                let seq = window::<T>(set, i);
                let masks = dropout.filter(|_| config.dropout_rate > 0.0).map(|epoch| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, epoch, i as u64));
                    dropout_masks(w, config.sequence_length, config.dropout_rate, &mut rng)
                });
                let (y, cache) = forward_cached(w, config.activation, &seq, config.sequence_length, masks.as_deref());
                let err = y - T::lit(set.targets()[i]);
                sq += err.to_f64().unwrap_or(f64::NAN).powi(2);
                backward(w, config.activation, &cache, masks.as_deref(), T::lit(2.0) * err * scale, &mut grad);
            }
            (sq, grad)
        })
        .collect();
    let mut total = GruWeights::zeros(w.input_dim(), &w.layer_sizes()).flatten();
    let mut sq = 0.0;
    for (s, g) in parts {
        sq += s;
        for (t, v) in total.iter_mut().zip(g.flatten()) {
            *t += v;
        }
    }
    let mut grad = GruWeights::zeros(w.input_dim(), &w.layer_sizes());
    grad.assign(&total);
    (sq, grad)
}

/// Loss (eval mode, no dropout) over the whole of `set` and its gradient,
/// flattened in [`GruWeights::flatten`] order.
pub fn objective_gradient<T: Scalar>(
    weights: &GruWeights<T>,
    config: &GruConfig,
    set: &TrainingSet,
) -> Result<(f64, Vec<T>)> {
    check_set(weights, config, set)?;
    let idx: Vec<usize> = (0..set.len()).collect();
    let n = set.len() as f64;
    let (sq, grad) = batch_terms(weights, config, set, &idx, T::lit(1.0 / n), None);
    let mut g = grad.flatten();
    let flat = weights.flatten();
    for ((gi, wi), k) in g.iter_mut().zip(&flat).zip(weights.kernel_mask()) {
        if k {
            *gi += T::lit(2.0 * config.l2_lambda) * *wi;
        }
    }
    let obj = sq / n + config.l2_lambda * weights.kernel_sq_norm().to_f64().unwrap_or(f64::NAN);
    Ok((obj, g))
}

/// Trains a freshly initialized network with Adam on shuffled mini-batches
/// and returns the weights from the epoch with the lowest validation loss.
pub fn train<T: Scalar>(config: &GruConfig, data: &TrainingSet, validation: &TrainingSet) -> Result<TrainOutcome<T>> {
    let init = GruWeights::<T>::init(config)?;
    train_from(config, init, data, validation)
}

/// As [`train`], starting from the given weights.
pub fn train_from<T: Scalar>(
    config: &GruConfig,
    init: GruWeights<T>,
    data: &TrainingSet,
    validation: &TrainingSet,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    init.validate()?;
    if data.is_empty() || validation.is_empty() {
        return Err(Error::InsufficientData("training and validation sets must be non-empty".into()));
    }
    check_set(&init, config, data)?;
    check_set(&init, config, validation)?;

    let mut w = init;
    let mut flat = w.flatten();
    let kernel = w.kernel_mask();
    let mut m = vec![T::zero(); flat.len()];
    let mut v = vec![T::zero(); flat.len()];
    let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
    let lr = T::lit(config.learning_rate);
    let eps = T::lit(ADAM_EPS);
    let two_lambda = T::lit(2.0 * config.l2_lambda);
    let mut step = 0i32;

    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, GruWeights<T>)> = None;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64, u64::MAX));
        order.shuffle(&mut rng);
        let mut epoch_sq = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = T::lit(1.0 / batch.len() as f64);
            let (sq, grad) = batch_terms(&w, config, data, batch, scale, Some(epoch as u64));
            if !sq.is_finite() {
                return Err(Error::Divergence { epoch, message: "non-finite training loss".into() });
            }
            epoch_sq += sq;
            step += 1;
            let c1 = T::one() - b1.powi(step);
            let c2 = T::one() - b2.powi(step);
            for (j, g) in grad.flatten().into_iter().enumerate() {
                let g = if kernel[j] { g + two_lambda * flat[j] } else { g };
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                flat[j] = flat[j] - lr * mhat / (vhat.sqrt() + eps);
            }
            w.assign(&flat);
        }
        let penalty = config.l2_lambda * w.kernel_sq_norm().to_f64().unwrap_or(f64::NAN);
        let train_loss = epoch_sq / data.len() as f64 + penalty;
        let preds = predict(&w, config, validation)?;
        let val_loss = loss(&preds, validation.targets(), &w, config.l2_lambda)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, message: format!("loss became {train_loss} / {val_loss}") });
        }
        history.train_loss.push(train_loss);
        history.validation_loss.push(val_loss);
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, w.clone()));
            history.best_epoch = epoch;
        }
    }
    let weights = best.map_or(w, |(_, bw)| bw);
    Ok(TrainOutcome { weights, history })
}

/// A trained network in either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    F32(GruWeights<f32>),
    F64(GruWeights<f64>),
}

impl Network {
    /// Trains in the precision named by the config.
    pub fn train(config: &GruConfig, data: &TrainingSet, validation: &TrainingSet) -> Result<(Self, TrainingHistory)> {
        Ok(match config.precision {
            Precision::F32 => {
                let o = train::<f32>(config, data, validation)?;
                (Network::F32(o.weights), o.history)
            }
            Precision::F64 => {
                let o = train::<f64>(config, data, validation)?;
                (Network::F64(o.weights), o.history)
            }
        })
    }

    pub fn predict(&self, config: &GruConfig, set: &TrainingSet) -> Result<Vec<f64>> {
        match self {
            Network::F32(w) => predict(w, config, set),
            Network::F64(w) => predict(w, config, set),
        }
    }

    pub fn to_json(&self, config: &GruConfig) -> Result<String> {
        match self {
            Network::F32(w) => WeightsDocument::new(config, w.clone()).to_json(),
            Network::F64(w) => WeightsDocument::new(config, w.clone()).to_json(),
        }
    }
}
