use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pooling::PoolSpec;
use crate::tensor::{Shape, Tensor};
use crate::trainer::data::Dataset;
use crate::trainer::model::{ModelGradients, TinyModel};

/// Plain SGD settings.
///
/// Weight decay applies to the convolution weights and the class bias only.
/// Pooling parameters (log-temperature, mixing pre-activation, gate weights)
/// step with `learning_rate * temp_lr_multiplier` and are never decayed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub temp_lr_multiplier: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            temp_lr_multiplier: 1.0,
            weight_decay: 1e-4,
            epochs: 30,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let finite_non_neg = |v: f64| v >= 0.0 && v.is_finite();
        if !finite_non_neg(self.learning_rate)
            || !finite_non_neg(self.temp_lr_multiplier)
            || !finite_non_neg(self.weight_decay)
        {
            return Err(Error::InvalidArgument(
                "learning rate, multiplier and weight decay must be finite and non-negative".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Summary of one training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training loss over the epoch's batches, as seen during the epoch.
    pub train_loss: f64,
    pub eval_accuracy: f64,
    /// `exp(log_t)` per temperature entry; empty for non-LAE pooling.
    pub temperatures: Vec<f64>,
}

/// Fraction of samples classified correctly.
pub fn accuracy(model: &TinyModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let predicted = model.predict(&data.inputs)?;
    let correct = predicted
        .iter()
        .zip(&data.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Gathers samples `idx` of `data` into one batch tensor.
pub(crate) fn gather(data: &Dataset, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let s = data.inputs.shape();
    let mut values = Vec::with_capacity(idx.len() * s.channels * s.window());
    for &i in idx {
        values.extend_from_slice(data.sample(i));
    }
    let labels = idx.iter().map(|&i| data.labels[i]).collect();
    Ok((
        Tensor::from_vec(Shape::new(idx.len(), s.channels, s.height, s.width), values)?,
        labels,
    ))
}

/// One SGD step. Decay touches only `weights` and `bias`.
pub fn sgd_step(model: &mut TinyModel, grads: &ModelGradients, cfg: &TrainConfig) {
    let lr = cfg.learning_rate;
    let wd = cfg.weight_decay;
    for (w, g) in model.weights.iter_mut().zip(&grads.weights) {
        *w -= lr * (g + wd * *w);
    }
    for (b, g) in model.bias.iter_mut().zip(&grads.bias) {
        *b -= lr * (g + wd * *b);
    }

    let pool_lr = lr * cfg.temp_lr_multiplier;
    match &mut model.pool {
        PoolSpec::Lae(temp) if temp.is_trainable() => {
            for (p, g) in temp.log_t_mut().iter_mut().zip(&grads.log_t) {
                *p -= pool_lr * g;
            }
        }
        PoolSpec::Mixed(m) => {
            for (p, g) in m.pre_alpha.iter_mut().zip(&grads.pre_alpha) {
                *p -= pool_lr * g;
            }
        }
        PoolSpec::Gated(gate) => {
            for (p, g) in gate.w.iter_mut().zip(&grads.gate_w) {
                *p -= pool_lr * g;
            }
        }
        _ => {}
    }
}

/// Trains `model` on `train` with mini-batch SGD, evaluating on `eval` after
/// every epoch. Deterministic for a given `cfg.seed`.
pub fn train(
    mut model: TinyModel,
    train: &Dataset,
    eval: &Dataset,
    cfg: &TrainConfig,
) -> Result<(TinyModel, Vec<TrainRecord>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = gather(train, idx)?;
            let (loss, grads) = match model.loss_and_grad(&x, &y) {
                Err(Error::NonFiniteLoss { loss, .. }) => {
                    return Err(Error::NonFiniteLoss { epoch, batch, loss })
                }
                other => other?,
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch, loss });
            }
            sgd_step(&mut model, &grads, cfg);
            total += loss;
            batches += 1;
        }
        records.push(TrainRecord {
            epoch,
            train_loss: total / batches as f64,
            eval_accuracy: accuracy(&model, eval)?,
            temperatures: model.temperatures(),
        });
    }
    Ok((model, records))
}
