use std::time::Instant;

use elf_tensor::ops::index_select0;
use elf_tensor::{grad, Element, PrngState, SgdMomentum, Tensor};

use super::{check_finite, clamp_images, dm_loss, DistillConfig, DistillOutcome, Method, SiameseLogEntry, TraceEntry};
use crate::data::{apply_augment, init_synthetic, sample_aug_params, sample_class, LabeledDataset};
use crate::error::{config_err, Result};
use crate::models::build_model;

/// Distribution matching. Every iteration draws `models_per_iteration`
/// freshly initialized, never trained networks, matches per-class mean
/// embeddings of a real batch and the synthetic images, and takes one
/// SGD-momentum step on the pixels followed by clamping to `[0, 1]`.
///
/// Streams: `seed.split(0)` initializes `S`; iteration `i` uses
/// `seed.split(1).split(i)` for its networks, real batches and augmentation.
pub fn distill_dm<T: Element>(real: &LabeledDataset<T>, config: &DistillConfig) -> Result<DistillOutcome<T>> {
    config.validate()?;
    if config.method != Method::Dm {
        return Err(config_err(format!("distill_dm called with method {}", config.method)));
    }
    let root = PrngState::new(config.seed);
    let mut syn = init_synthetic(real, config.ipc, config.init, root.split(0))?;
    let labels_before = syn.labels_hash();
    let mut opt = SgdMomentum::new(T::of(config.lr_images), T::of(config.momentum_images));
    let [_, h, w] = syn.image_shape();
    let mut trace = Vec::with_capacity(config.iterations);
    let mut siamese_log = Vec::new();
    let start = Instant::now();

    for it in 0..config.iterations {
        let it_rng = root.split(1).split(it as u64);
        let mut batch_rng = it_rng.split(1);
        let mut aug_rng = it_rng.split(2);

        let mut reals = Vec::with_capacity(syn.class_count);
        let mut syns = Vec::with_capacity(syn.class_count);
        for c in 0..syn.class_count {
            let r = sample_class(real, c, config.real_batch, &mut batch_rng)?;
            let range = syn.class_range(c);
            let s = index_select0(&syn.images, &range.collect::<Vec<_>>())?;
            match &config.augment {
                Some(aug) => {
                    let p = sample_aug_params(aug, h, w, &mut aug_rng)?;
                    reals.push(apply_augment(&r, &p)?);
                    syns.push(apply_augment(&s, &p)?);
                    siamese_log.push(SiameseLogEntry {
                        iteration: it,
                        class: c,
                        real: p.clone(),
                        synthetic: p,
                    });
                }
                None => {
                    reals.push(r);
                    syns.push(s);
                }
            }
        }

        let mut loss: Option<Tensor<T>> = None;
        for m in 0..config.models_per_iteration {
            let mut model = build_model::<T>(&config.model, it_rng.split(0).split(m as u64))?;
            model.set_requires_grad(false);
            let l = dm_loss(&model, &reals, &syns)?;
            loss = Some(match loss {
                Some(acc) => acc.add(&l)?,
                None => l,
            });
        }
        let loss = loss
            .expect("models_per_iteration > 0")
            .scale(T::of(1.0 / config.models_per_iteration as f64));
        check_finite(&loss, "DM loss", it)?;
        let g = grad(&loss, &[&syn.images], false)?.remove(0);
        check_finite(&g, "DM image gradient", it)?;
        opt.step("images", &mut syn.images, &g)?;
        clamp_images(&mut syn)?;
        trace.push(TraceEntry {
            iteration: it,
            loss: loss.item().as_f64(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }

    let labels_after = syn.labels_hash();
    Ok(DistillOutcome {
        synthetic: syn,
        trace,
        siamese_log,
        real_hash: real.content_hash(),
        labels_hash: (labels_before, labels_after),
    })
}
