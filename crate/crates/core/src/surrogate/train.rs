use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::{featurize, FeatureSet, FeatureStack};
use super::model::{loss_and_gradient, SurrogateArch, SurrogateParams};
use crate::error::{Error, Result};
use crate::optim::{cosine_lr, AdamState};
use crate::rng::{self, Purpose};
use crate::scalar::Real;
use crate::volume::{Mask, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateTrainConfig {
    pub feature_set: FeatureSet,
    pub hidden: usize,
    pub epochs: usize,
    /// Volumes per minibatch.
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine annealing floor.
    pub lr_min: f64,
    /// Decoupled weight decay; limits how sharp the probability map gets.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for SurrogateTrainConfig {
    fn default() -> Self {
        SurrogateTrainConfig {
            feature_set: FeatureSet::LocalStats,
            hidden: 8,
            epochs: 20,
            batch_size: 4,
            lr: 2e-2,
            lr_min: 1e-6,
            weight_decay: 0.1,
            seed: 0,
        }
    }
}

impl SurrogateTrainConfig {
    /// Learning-rate schedule and epoch count of the full-resolution setup.
    pub fn paper() -> Self {
        SurrogateTrainConfig {
            epochs: 200,
            lr: 1e-4,
            lr_min: 1e-6,
            weight_decay: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay", "must be >= 0"));
        }
        if !(self.lr > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return Err(Error::invalid("lr", "need 0 <= lr_min <= lr and lr > 0"));
        }
        Ok(())
    }
}

fn dataset_loss<T: Real>(params: &SurrogateParams<T>, data: &[(&FeatureStack<T>, &Mask)]) -> Result<f64> {
    Ok(loss_and_gradient(params, data)?.0.to_f64_lossy())
}

/// Minibatch Adam on the mean soft-Dice loss with cosine learning-rate
/// annealing. Returns frozen parameters.
pub fn train<T: Real>(dataset: &[(Volume<T>, Mask)], cfg: &SurrogateTrainConfig) -> Result<SurrogateParams<T>> {
    cfg.validate()?;
    let first = dataset.first().ok_or_else(|| Error::invalid("dataset", "empty"))?;
    let channels = first.0.channels();
    for (i, (x, m)) in dataset.iter().enumerate() {
        if x.dims() != m.dims() || x.dims() != first.0.dims() || x.channels() != channels {
            return Err(Error::invalid("dataset", format!("sample {i} has mismatched dims or channels")));
        }
    }
    let arch = SurrogateArch {
        feature_set: cfg.feature_set,
        channels,
        hidden: cfg.hidden,
    };
    let feats: Vec<FeatureStack<T>> = dataset.iter().map(|(x, _)| featurize(x, cfg.feature_set)).collect();
    let pairs: Vec<(&FeatureStack<T>, &Mask)> = feats.iter().zip(dataset.iter().map(|(_, m)| m)).collect();

    let mut params = SurrogateParams::init(arch, cfg.seed);
    let initial = dataset_loss(&SurrogateParams::<T>::zeros(arch), &pairs)?;
    let mut adam = AdamState::new(arch.n_params());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut shuffle = rng::stream(cfg.seed, Purpose::SurrogateBatches, 0);
    let steps_per_epoch = pairs.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * steps_per_epoch;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch: Vec<(&FeatureStack<T>, &Mask)> = batch_idx.iter().map(|&i| pairs[i]).collect();
            let (loss, grad) = loss_and_gradient(&params, &batch)?;
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric {
                    stage: "surrogate training",
                    at: format!("epoch {epoch}"),
                    message: format!("loss {loss}"),
                });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.step_decayed(&mut params.theta, &grad, cosine_lr(cfg.lr, cfg.lr_min, step, total), cfg.weight_decay);
            step += 1;
        }
        history.push(epoch_loss / pairs.len() as f64);
    }

    let mut params = params.freeze();
    let final_loss = dataset_loss(&params, &pairs)?;
    if !final_loss.is_finite() {
        return Err(Error::Numeric {
            stage: "surrogate training",
            at: format!("epoch {}", cfg.epochs),
            message: "final loss is not finite".into(),
        });
    }
    params.meta.epochs_run = cfg.epochs;
    params.meta.initial_loss = Some(initial);
    params.meta.final_loss = Some(final_loss);
    params.meta.loss_history = history;
    Ok(params)
}
