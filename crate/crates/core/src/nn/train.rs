use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layer::{Layer, ParamGrads};
use super::model::{cross_entropy_logit_grad, Model};
use crate::error::{Error, Result};
use crate::image::LabeledImage;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Classical momentum coefficient; 0 gives plain SGD.
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            epochs: 10,
            batch_size: 32,
            momentum: 0.9,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean cross-entropy per epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Fraction of items whose top-1 prediction equals the label.
pub fn accuracy(model: &Model, data: &[LabeledImage]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let correct = data
        .par_iter()
        .map(|item| model.forward(&item.image).map(|p| (p.argmax() == item.label) as usize))
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / data.len() as f64)
}

/// Mini-batch SGD with momentum on cross-entropy.
///
/// Per-sample gradients are computed in parallel but summed in sample order,
/// so the result depends only on the inputs and `cfg.seed`.
pub fn train_toy(
    mut model: Model,
    train: &[LabeledImage],
    test: Option<&[LabeledImage]>,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    if train.is_empty() {
        return Err(Error::Precondition("training set is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.learning_rate.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Parameter(
            "batch size and learning rate must be positive".into(),
        ));
    }
    for item in train {
        if item.image.shape() != model.input_shape() {
            return Err(Error::shape(model.input_shape(), item.image.shape()));
        }
        if item.label.index() >= model.num_classes() {
            return Err(Error::Parameter(format!("label {} out of range", item.label)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity: Vec<Option<ParamGrads>> = model.layers().iter().map(Layer::zero_grads).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = |loss: f64| Error::Divergence {
                epoch,
                batch: batch_no,
                loss,
                learning_rate: cfg.learning_rate,
            };
            let per_sample = match batch
                .par_iter()
                .map(|&i| sample_gradient(&model, &train[i]))
                .collect::<Result<Vec<_>>>()
            {
                Err(Error::Numeric(_)) => return Err(diverged(f64::NAN)),
                other => other?,
            };
            let mut loss = 0.0;
            let mut total: Vec<Option<ParamGrads>> = model.layers().iter().map(Layer::zero_grads).collect();
            for (l, grads) in per_sample {
                loss += l;
                for (acc, g) in total.iter_mut().zip(&grads) {
                    if let (Some(acc), Some(g)) = (acc.as_mut(), g.as_ref()) {
                        acc.add_assign(g);
                    }
                }
            }
            if !loss.is_finite() {
                return Err(diverged(loss));
            }
            epoch_loss += loss;
            let scale = 1.0 / batch.len() as f64;
            if !apply_update(&mut model, &mut velocity, &total, cfg.learning_rate * scale, cfg.momentum) {
                return Err(diverged(loss / batch.len() as f64));
            }
        }
        epoch_losses.push(epoch_loss / train.len() as f64);
    }

    let train_accuracy = accuracy(&model, train)?;
    let test_accuracy = test.map(|t| accuracy(&model, t)).transpose()?;
    Ok((
        model,
        TrainReport {
            epoch_losses,
            train_accuracy,
            test_accuracy,
        },
    ))
}

fn sample_gradient(model: &Model, item: &LabeledImage) -> Result<(f64, Vec<Option<ParamGrads>>)> {
    let trace = model.trace(&item.image)?;
    let (loss, grad_logits) = cross_entropy_logit_grad(trace.probs(), item.label.index());
    let (_, params) = model.backward_from_logits(&trace, grad_logits, true)?;
    Ok((loss, params))
}

fn apply_update(
    model: &mut Model,
    velocity: &mut [Option<ParamGrads>],
    grads: &[Option<ParamGrads>],
    step: f64,
    momentum: f64,
) -> bool {
    for ((layer, vel), grad) in model.layers_mut().iter_mut().zip(velocity.iter_mut()).zip(grads) {
        let (Some(vel), Some(grad)) = (vel.as_mut(), grad.as_ref()) else {
            continue;
        };
        let (weights, bias) = match layer {
            Layer::Conv2d(c) => (&mut c.weights, &mut c.bias),
            Layer::Dense(d) => (&mut d.weights, &mut d.bias),
            _ => continue,
        };
        for (params, v, g) in [
            (weights, &mut vel.weights, &grad.weights),
            (bias, &mut vel.bias, &grad.bias),
        ] {
            for ((w, v), g) in params.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = momentum * *v + g;
                let next = *w as f64 - step * *v;
                if !next.is_finite() || !(next as f32).is_finite() {
                    return false;
                }
                *w = next as f32;
            }
        }
    }
    true
}
