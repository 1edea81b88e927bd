use elf_tensor::ops::index_select0;
use elf_tensor::{Element, PrngState, SgdMomentum, Tensor};
use serde::{Deserialize, Serialize};

use super::{elf_total_loss, front_distance, rear_loss, task_loss, ElfConfig, FeatureCache, SpatialAdapt};
use crate::data::{augment_per_sample, SyntheticDataset};
use crate::error::{config_err, shape_err, Error, Result};
use crate::models::{build_model, Mode, ModelConfig, ModelState, SplitPoint};
use crate::train::{param_grads, TrainConfig};

/// Loss values per optimization step. Terms that are not part of the
/// objective stay empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ElfTraces {
    pub epoch: Vec<usize>,
    pub total: Vec<f64>,
    pub task: Vec<f64>,
    pub front: Vec<f64>,
    pub rear: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome<T: Element = f32> {
    pub model: ModelState<T>,
    pub traces: ElfTraces,
    /// Split used for the front and rear terms, when a cache was given.
    pub split: Option<SplitPoint>,
}

/// Trains a fresh `eval` model on the synthetic set.
///
/// Without a cache this is the plain protocol: classification loss only.
/// With a cache every step adds the front and rear terms on the same
/// un-augmented batch; `train.augment` then applies to the task term alone.
/// Zero-weight terms are never computed, so `λ_front = λ_rear = 0` follows
/// the plain trajectory bit for bit.
///
/// Streams: `seed.split(0)` initializes the model, `seed.split(1)` orders
/// minibatches and `seed.split(2)` drives augmentation.
pub fn train_evaluation_model<T: Element>(
    eval: &ModelConfig,
    synthetic: &SyntheticDataset<T>,
    cache: Option<&FeatureCache<T>>,
    elf: &ElfConfig,
    train: &TrainConfig,
    seed: PrngState,
) -> Result<EvalOutcome<T>> {
    train.validate()?;
    elf.validate()?;
    if synthetic.is_empty() {
        return Err(config_err("cannot train on an empty synthetic set"));
    }
    let mut model: ModelState<T> = build_model(eval, seed.split(0))?;
    let split = match cache {
        Some(c) => {
            c.verify(synthetic)?;
            let sp = elf.split_point(eval)?;
            check_compatible(&model, sp, c, elf.spatial_adapt)?;
            Some(sp)
        }
        None => None,
    };
    let sections = split.map(|sp| model.split(sp)).transpose()?;
    let use_front = cache.is_some() && elf.lambda_front != 0.0;
    let use_rear = cache.is_some() && elf.lambda_rear != 0.0;
    let use_task = elf.use_task || cache.is_none();

    let mut opt = SgdMomentum::new(T::of(train.lr), T::of(train.momentum));
    let mut order_rng = seed.split(1);
    let mut aug_rng = seed.split(2);
    let images = synthetic.images.detach();
    let labels = synthetic.labels();
    let mut traces = ElfTraces::default();

    for epoch in 0..train.epochs {
        opt.lr = T::of(train.lr_at(epoch));
        for (step, ids) in train.batches(synthetic.len(), &mut order_rng).into_iter().enumerate() {
            let x = index_select0(&images, &ids)?;
            let y: Vec<usize> = ids.iter().map(|&i| labels[i]).collect();
            let x_task = match &train.augment {
                Some(aug) if use_task => augment_per_sample(&x, aug, &mut aug_rng)?,
                _ => x.clone(),
            };

            let (mut task, mut front) = (None, None);
            match (&sections, cache) {
                // one pass through the front serves both terms
                (Some((f, r)), Some(c)) if use_front && use_task && train.augment.is_none() => {
                    let h = f.forward(&mut model, &x, Mode::Train)?;
                    front = Some(front_distance(&h, c, &ids, elf)?);
                    let logits = r.forward(&mut model, &h, Mode::Train)?;
                    task = Some(elf_tensor::ops::softmax_cross_entropy(&logits, &y)?);
                }
                _ => {
                    if let (Some((f, _)), Some(c), true) = (&sections, cache, use_front) {
                        let h = f.forward(&mut model, &x, Mode::Train)?;
                        front = Some(front_distance(&h, c, &ids, elf)?);
                    }
                    if use_task {
                        task = Some(task_loss(&mut model, &x_task, &y)?);
                    }
                }
            }
            let rear = match (&sections, cache, use_rear) {
                (Some((_, r)), Some(c), true) => Some(rear_loss(&model, r, c, &ids, &y, elf)?),
                _ => None,
            };
            let total = elf_total_loss(
                task.as_ref(),
                front.as_ref(),
                rear.as_ref(),
                elf.lambda_front,
                elf.lambda_rear,
            )?;
            let value = |t: &Option<Tensor<T>>| t.as_ref().map(|t| t.item().as_f64());
            if !total.is_finite() {
                return Err(Error::NonFinite {
                    stage: format!("evaluation training of {}", eval.label()),
                    detail: format!(
                        "epoch {epoch} step {step}: task {:?}, front {:?}, rear {:?}",
                        value(&task),
                        value(&front),
                        value(&rear)
                    ),
                });
            }
            let grads = param_grads(&model, &total, train.weight_decay)?;
            model.apply_gradients(&mut opt, &grads)?;

            traces.epoch.push(epoch);
            traces.total.push(total.item().as_f64());
            for (trace, term) in [
                (&mut traces.task, &task),
                (&mut traces.front, &front),
                (&mut traces.rear, &rear),
            ] {
                if let Some(v) = value(term) {
                    trace.push(v);
                }
            }
        }
    }
    Ok(EvalOutcome { model, traces, split })
}

/// Fails fast when the cached features cannot stand in for the front output.
fn check_compatible<T: Element>(
    model: &ModelState<T>,
    sp: SplitPoint,
    cache: &FeatureCache<T>,
    adapt: SpatialAdapt,
) -> Result<()> {
    let (front, _) = model.split(sp)?;
    check_feature_shapes(
        &model.config().label(),
        &front.output_shape(model),
        &cache.feature_shape(),
        adapt,
    )
}

/// Channels must agree exactly; spatial sizes may differ only when
/// adaptation is on.
pub(crate) fn check_feature_shapes(model: &str, front: &[usize], feat: &[usize], adapt: SpatialAdapt) -> Result<()> {
    if front.len() != 3 || feat.len() != 3 || front[0] != feat[0] {
        return Err(shape_err(format!(
            "front section of {model} outputs {front:?} but cached features are {feat:?}; channels must match"
        )));
    }
    if front[1..] != feat[1..] && adapt == SpatialAdapt::Off {
        return Err(shape_err(format!(
            "front output {front:?} and cached features {feat:?} differ spatially and spatial adaptation is off"
        )));
    }
    Ok(())
}
