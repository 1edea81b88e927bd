//! Plain classification training and top-1 evaluation.

use elf_tensor::ops::{index_select0, softmax_cross_entropy};
use elf_tensor::{grad, Element, PrngState, SgdMomentum, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{augment_per_sample, epoch_batches, AugConfig, LabeledDataset};
use crate::error::{config_err, Error, Result};
use crate::models::{Mode, ModelState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Minibatch size; `None` trains on the whole set every step.
    pub batch_size: Option<usize>,
    /// Multiply the learning rate by 0.1 once half the epochs are done.
    pub lr_decay_at_half: bool,
    /// Augment every training image with its own draw; `None` trains on raw
    /// images.
    pub augment: Option<AugConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: None,
            lr_decay_at_half: true,
            augment: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(config_err(format!(
                "training needs lr >= 0, momentum in [0, 1) and weight decay >= 0, got {}, {}, {}",
                self.lr, self.momentum, self.weight_decay
            )));
        }
        if self.batch_size == Some(0) {
            return Err(config_err("batch size must be positive"));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.lr_decay_at_half && epoch >= self.epochs / 2 && self.epochs > 1 {
            self.lr * 0.1
        } else {
            self.lr
        }
    }

    /// Index batches for one epoch: the whole set in order when full-batch,
    /// otherwise a fresh permutation drawn from `rng`.
    pub fn batches(&self, len: usize, rng: &mut PrngState) -> Vec<Vec<usize>> {
        match self.batch_size {
            Some(b) if b < len => epoch_batches(len, b, rng),
            _ => vec![(0..len).collect()],
        }
    }
}

/// Gradients of `loss` for every parameter, plus weight decay.
pub(crate) fn param_grads<T: Element>(
    model: &ModelState<T>,
    loss: &Tensor<T>,
    weight_decay: f64,
) -> Result<Vec<(String, Tensor<T>)>> {
    let params: Vec<&Tensor<T>> = model.params().values().collect();
    let grads = grad(loss, &params, false)?;
    let wd = T::of(weight_decay);
    model
        .params()
        .iter()
        .zip(grads)
        .map(|((name, p), g)| {
            let g = if weight_decay > 0.0 {
                let v = g.data().iter().zip(p.data()).map(|(&g, &p)| g + wd * p).collect();
                Tensor::from_vec(g.shape(), v)?
            } else {
                g
            };
            Ok((name.clone(), g))
        })
        .collect()
}

/// Per-step losses of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epoch: Vec<usize>,
    pub loss: Vec<f64>,
}

/// Trains `model` with softmax cross-entropy. `on_epoch(e, model)` runs
/// after epoch `e` (1-based) completes, e.g. to save checkpoints.
pub fn train_classifier<T: Element>(
    model: &mut ModelState<T>,
    data: &LabeledDataset<T>,
    config: &TrainConfig,
    seed: PrngState,
    mut on_epoch: impl FnMut(usize, &ModelState<T>) -> Result<()>,
) -> Result<LossTrace> {
    config.validate()?;
    if data.is_empty() {
        return Err(config_err("cannot train on an empty dataset"));
    }
    let mut opt = SgdMomentum::new(T::of(config.lr), T::of(config.momentum));
    let mut order_rng = seed.split(0);
    let mut aug_rng = seed.split(1);
    let images = data.images.detach();
    let mut trace = LossTrace::default();
    for epoch in 0..config.epochs {
        opt.lr = T::of(config.lr_at(epoch));
        for (step, ids) in config.batches(data.len(), &mut order_rng).into_iter().enumerate() {
            let mut x = index_select0(&images, &ids)?;
            if let Some(aug) = &config.augment {
                x = augment_per_sample(&x, aug, &mut aug_rng)?;
            }
            let y: Vec<usize> = ids.iter().map(|&i| data.labels[i]).collect();
            let loss = softmax_cross_entropy(&model.forward(&x, Mode::Train)?, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    stage: "classifier training".into(),
                    detail: format!("epoch {epoch} step {step}"),
                });
            }
            let grads = param_grads(model, &loss, config.weight_decay)?;
            model.apply_gradients(&mut opt, &grads)?;
            trace.epoch.push(epoch);
            trace.loss.push(loss.item().as_f64());
        }
        on_epoch(epoch + 1, model)?;
    }
    Ok(trace)
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows<T: Element>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape().last().copied().unwrap_or(1).max(1);
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Eval-mode logits in chunks of `batch` samples.
pub fn predict<T: Element>(model: &ModelState<T>, images: &Tensor<T>, batch: usize) -> Result<Vec<usize>> {
    let n = images.shape()[0];
    let images = images.detach();
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(batch.max(1)) {
        let ids: Vec<usize> = (start..(start + batch).min(n)).collect();
        out.extend(argmax_rows(&model.forward_eval(&index_select0(&images, &ids)?)?));
    }
    Ok(out)
}

/// Top-1 accuracy in `[0, 1]`.
pub fn evaluate_accuracy<T: Element>(model: &ModelState<T>, test: &LabeledDataset<T>) -> Result<f64> {
    if test.is_empty() {
        return Err(config_err("accuracy of an empty test set is undefined"));
    }
    let pred = predict(model, &test.images, 256)?;
    Ok(accuracy(&pred, &test.labels))
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        let t = Tensor::<f32>::from_slice(&[3, 3], &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0, 5.0, 5.0, 5.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![0, 1, 0]);
    }

    #[test]
    fn degenerate_accuracies() {
        // constant logits predict class 0 everywhere: exactly 1/K on a balanced set
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let constant = argmax_rows(&Tensor::<f64>::zeros(&[40, 4]));
        assert_eq!(accuracy(&constant, &labels), 0.25);
        let oracle: Vec<f64> = labels
            .iter()
            .flat_map(|&l| (0..4).map(move |k| if k == l { 1.0 } else { 0.0 }))
            .collect();
        let oracle = argmax_rows(&Tensor::from_vec(&[40, 4], oracle).unwrap());
        assert_eq!(accuracy(&oracle, &labels), 1.0);
    }

    #[test]
    fn random_logits_land_near_chance() {
        let mut rng = PrngState::new(2024);
        let labels: Vec<usize> = (0..1000).map(|_| rng.next_below(4)).collect();
        let logits: Vec<f64> = (0..4000).map(|_| rng.next_uniform()).collect();
        let acc = accuracy(&argmax_rows(&Tensor::from_vec(&[1000, 4], logits).unwrap()), &labels);
        // simulated once and pinned
        assert_eq!(acc, 0.225);
        assert!((0.20..=0.30).contains(&acc));
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        assert_eq!(c.lr_at(4), 0.01);
        assert!((c.lr_at(5) - 0.001).abs() < 1e-15);
        let mut rng = PrngState::new(0);
        assert_eq!(c.batches(3, &mut rng), vec![vec![0, 1, 2]]);
        let mb = TrainConfig {
            batch_size: Some(2),
            ..c
        };
        let b = mb.batches(5, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);
    }
}
