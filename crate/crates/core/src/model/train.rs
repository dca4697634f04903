use std::borrow::Cow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{images_to_batch, CwccModel};
use crate::dataset::{LinearImage, Sample};
use crate::error::{Error, Result};
use crate::metrics::recovery_error;
use crate::tensor::{Adam, AdamConfig, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Drives shuffling and dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean training loss (degrees) over the epoch's batches, with dropout.
    pub train_error: f64,
    /// Mean recovery error on the validation set, or NaN without one.
    pub val_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    /// Epoch whose weights were kept; 0 means the initial weights.
    pub best_epoch: usize,
}

fn at_size(samples: &[Sample], size: usize) -> Result<Vec<Cow<'_, LinearImage>>> {
    samples
        .iter()
        .map(|s| {
            if s.image.height() == size && s.image.width() == size {
                Ok(Cow::Borrowed(&s.image))
            } else {
                s.image.resize(size, size).map(Cow::Owned)
            }
        })
        .collect()
}

fn mean_recovery(model: &CwccModel, images: &[Cow<'_, LinearImage>], samples: &[Sample]) -> Result<f64> {
    let refs: Vec<&LinearImage> = images.iter().map(|c| c.as_ref()).collect();
    let est = model.estimate_batch(&refs)?;
    Ok(est.iter().zip(samples).map(|(e, s)| recovery_error(&s.gt, e)).sum::<f64>() / samples.len() as f64)
}

/// Minimises the mean recovery angle with Adam. Images not already at the
/// model's input size are resized once up front. The weights of the epoch
/// with the lowest validation error (training error without a validation
/// set) are restored at the end.
pub fn train(model: &mut CwccModel, train: &[Sample], val: &[Sample], config: &TrainConfig) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if !(config.adam.lr >= 0.0 && config.adam.lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be >= 0, got {}", config.adam.lr)));
    }
    let size = model.config().input_size;
    let train_images = at_size(train, size)?;
    let val_images = at_size(val, size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = if val.is_empty() {
        f64::INFINITY
    } else {
        mean_recovery(model, &val_images, val)?
    };
    let mut best_epoch = 0;
    let mut best_params = model.parameter_snapshot();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let imgs: Vec<&LinearImage> = chunk.iter().map(|&i| train_images[i].as_ref()).collect();
            let batch = images_to_batch(&imgs)?;
            let gt: Vec<f32> = chunk.iter().flat_map(|&i| train[i].gt.rgb().map(|v| v as f32)).collect();
            let gt = Tensor::new(gt, &[chunk.len(), 3])?;
            let trace = model.forward_trace(&batch, Some(&mut rng))?;
            let loss = trace.estimate.angular_error_deg(&gt)?.mean();
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx + 1,
                    loss: value,
                });
            }
            loss.backward()?;
            adam.step(model.parameters_mut())?;
            if model.named_parameters().iter().any(|(_, t)| !t.all_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx + 1,
                    loss: value,
                });
            }
            total += value * chunk.len() as f64;
        }
        let train_error = total / train.len() as f64;
        let val_error = if val.is_empty() {
            f64::NAN
        } else {
            mean_recovery(model, &val_images, val)?
        };
        let score = if val.is_empty() { train_error } else { val_error };
        if score < best {
            best = score;
            best_epoch = epoch;
            best_params = model.parameter_snapshot();
        }
        log.push(EpochLog {
            epoch,
            train_error,
            val_error,
        });
    }
    model.set_parameters(&best_params)?;
    Ok(TrainReport { log, best_epoch })
}
