//! Auxiliary head that predicts the backbone's own recovery error from the
//! merging block's hidden activation (post-ReLU, pre-dropout).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LinearImage, Sample};
use crate::error::{Error, Result};
use crate::metrics::{recovery_error, Illuminant};
use crate::model::{images_to_batch, rows_to_illuminants, CwccModel};
use crate::tensor::{no_grad, Adam, AdamConfig, DenseLayer, Tensor};

/// Name prefix of branch tensors inside a checkpoint.
pub const BRANCH_PREFIX: &str = "uq/";

const WIDTHS: [usize; 2] = [40, 15];

#[derive(Debug, Clone)]
pub struct UncertaintyBranch {
    pub layers: [DenseLayer; 3],
}

impl UncertaintyBranch {
    /// `inputs → 40 → 15 → 1` with ReLU between layers.
    pub fn new(inputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            layers: [
                DenseLayer::init(inputs, WIDTHS[0], &mut rng),
                DenseLayer::init(WIDTHS[0], WIDTHS[1], &mut rng),
                DenseLayer::init(WIDTHS[1], 1, &mut rng),
            ],
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    /// `[N, inputs]` to `[N, 1]` non-negative predicted error in degrees.
    pub fn forward(&self, hidden: &Tensor) -> Result<Tensor> {
        let x = self.layers[0].forward(hidden)?.relu();
        let x = self.layers[1].forward(&x)?.relu();
        Ok(self.layers[2].forward(&x)?.abs())
    }

    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(6);
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("{BRANCH_PREFIX}dense{}/weight", i + 1), &layer.weight));
            out.push((format!("{BRANCH_PREFIX}dense{}/bias", i + 1), &layer.bias));
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Rebuilds a branch from `(name, shape, data)` triples in
    /// [`Self::named_parameters`] order.
    pub fn from_named(values: &[(String, Vec<usize>, Vec<f32>)]) -> Result<Self> {
        let first = values
            .first()
            .ok_or_else(|| Error::invalid("no uncertainty branch tensors"))?;
        let inputs = *first.1.first().ok_or_else(|| Error::invalid("branch weight has rank 0"))?;
        let mut branch = Self::new(inputs, 0);
        let expected: Vec<(String, Vec<usize>)> = branch
            .named_parameters()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != values.len() {
            return Err(Error::invalid(format!(
                "uncertainty branch needs {} tensors, got {}",
                expected.len(),
                values.len()
            )));
        }
        for (slot, ((name, shape), (vn, vs, vd))) in branch.parameters_mut().into_iter().zip(expected.iter().zip(values)) {
            if name != vn || shape != vs {
                return Err(Error::invalid(format!("branch tensor {vn} {vs:?} does not match {name} {shape:?}")));
            }
            *slot = Tensor::parameter(vd.clone(), vs)?;
        }
        Ok(branch)
    }

    pub fn parameter_snapshot(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        self.named_parameters()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec(), t.to_vec()))
            .collect()
    }
}

/// One `(hidden activation, true recovery error)` pair per image.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDataset {
    pub hidden: Vec<Vec<f32>>,
    pub errors: Vec<f64>,
}

impl ErrorDataset {
    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }
}

fn resized(model: &CwccModel, image: &LinearImage) -> Result<LinearImage> {
    let s = model.config().input_size;
    if image.height() == s && image.width() == s {
        Ok(image.clone())
    } else {
        image.resize(s, s)
    }
}

/// Runs the frozen model in inference mode over `samples` and records each
/// hidden vector with its recovery error in degrees.
pub fn build_error_dataset(model: &CwccModel, samples: &[Sample]) -> Result<ErrorDataset> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot build an error dataset from zero images"));
    }
    let images = samples.iter().map(|s| resized(model, &s.image)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&LinearImage> = images.iter().collect();
    let mut out = ErrorDataset {
        hidden: Vec::with_capacity(samples.len()),
        errors: Vec::with_capacity(samples.len()),
    };
    for ((est, hidden), s) in model.estimate_with_hidden(&refs)?.into_iter().zip(samples) {
        out.hidden.push(hidden);
        out.errors.push(recovery_error(&s.gt, &est));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for BranchTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Fits the branch to `data` by mean squared error. `backbone` is only read:
/// its parameter digest is compared before and after, and any change aborts
/// with an invariant violation. Returns the mean training loss per epoch.
pub fn train_branch(
    backbone: &CwccModel,
    branch: &mut UncertaintyBranch,
    data: &ErrorDataset,
    config: &BranchTrainConfig,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::invalid("error dataset is empty"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let width = branch.inputs();
    if let Some(h) = data.hidden.iter().find(|h| h.len() != width) {
        return Err(Error::invalid(format!(
            "branch expects {width}-d hidden vectors, got {}",
            h.len()
        )));
    }
    let before = backbone.parameter_digest();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let x: Vec<f32> = chunk.iter().flat_map(|&i| data.hidden[i].iter().copied()).collect();
            let y: Vec<f32> = chunk.iter().map(|&i| data.errors[i] as f32).collect();
            let x = Tensor::new(x, &[chunk.len(), width])?;
            let y = Tensor::new(y, &[chunk.len(), 1])?;
            let diff = branch.forward(&x)?.sub(&y)?;
            let loss = diff.mul(&diff)?.mean();
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx + 1,
                    loss: value,
                });
            }
            loss.backward()?;
            adam.step(branch.parameters_mut())?;
            total += value * chunk.len() as f64;
        }
        losses.push(total / data.len() as f64);
    }
    if backbone.parameter_digest() != before {
        return Err(Error::Invariant("backbone parameters changed during branch training".into()));
    }
    Ok(losses)
}

/// Illuminant estimate and predicted error from one shared forward pass.
pub fn predict_with_uncertainty(
    model: &CwccModel,
    branch: &UncertaintyBranch,
    image: &LinearImage,
) -> Result<(Illuminant, f64)> {
    Ok(predict_batch(model, branch, &[image])?.remove(0))
}

/// Batched [`predict_with_uncertainty`]; images must already be at the
/// model's input size.
pub fn predict_batch(
    model: &CwccModel,
    branch: &UncertaintyBranch,
    images: &[&LinearImage],
) -> Result<Vec<(Illuminant, f64)>> {
    let s = model.config().input_size;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(16) {
        if let Some(bad) = chunk.iter().find(|i| i.height() != s || i.width() != s) {
            return Err(Error::invalid(format!(
                "model expects {s}x{s} input, got {}x{}; resize first",
                bad.height(),
                bad.width()
            )));
        }
        let (est, err) = no_grad(|| -> Result<_> {
            let trace = model.forward_trace(&images_to_batch(chunk)?, None)?;
            Ok((trace.estimate.clone(), branch.forward(&trace.hidden)?))
        })?;
        out.extend(rows_to_illuminants(&est)?.into_iter().zip(err.data().iter().map(|&v| v as f64)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub tau: f64,
    /// Indices into the input with predicted error `<= tau`.
    pub accepted: Vec<usize>,
    pub rejected: usize,
    /// Largest true error among accepted items, `None` when nothing passed.
    pub worst_accepted: Option<f64>,
}

impl ThresholdReport {
    pub fn accepted_count(&self) -> usize {
        self.accepted.len()
    }

    pub fn summary_line(&self) -> String {
        match self.worst_accepted {
            Some(w) => format!(
                "tau={:.4} accepted={} rejected={} worst_accepted={:.4}",
                self.tau,
                self.accepted.len(),
                self.rejected,
                w
            ),
            None => format!("tau={:.4} accepted=0 rejected={} (no image passed)", self.tau, self.rejected),
        }
    }
}

/// Keeps `(predicted, true)` pairs with `predicted <= tau`.
pub fn threshold_filter(predictions: &[(f64, f64)], tau: f64) -> Result<ThresholdReport> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::invalid(format!("tau must be >= 0, got {tau}")));
    }
    let accepted: Vec<usize> = predictions
        .iter()
        .enumerate()
        .filter(|(_, (p, _))| *p <= tau)
        .map(|(i, _)| i)
        .collect();
    let worst_accepted = accepted.iter().map(|&i| predictions[i].1).reduce(f64::max);
    Ok(ThresholdReport {
        tau,
        rejected: predictions.len() - accepted.len(),
        accepted,
        worst_accepted,
    })
}
