use std::time::Instant;

use elf_tensor::ops::{index_select0, softmax_cross_entropy};
use elf_tensor::{grad, Element, PrngState, SgdMomentum, Tensor};

use super::{
    check_finite, clamp_images, layerwise_cosine_distance, DistillConfig, DistillOutcome, Method, SiameseLogEntry,
    TraceEntry,
};
use crate::data::{apply_augment, init_synthetic, sample_aug_params, sample_class, LabeledDataset};
use crate::error::{config_err, Error, Result};
use crate::models::{build_model, Mode, ModelState};

/// Layerwise cosine distance between the classification-loss gradients of
/// a real and a synthetic batch, one layer per parameter tensor. The real
/// gradients are constants; the synthetic ones keep their graph, so the
/// result is differentiable with respect to the synthetic pixels.
///
/// Both passes run in Train mode. Parameters must require gradients.
pub fn grad_match_loss<T: Element>(
    model: &mut ModelState<T>,
    real: &Tensor<T>,
    real_labels: &[usize],
    synthetic: &Tensor<T>,
    synthetic_labels: &[usize],
) -> Result<Tensor<T>> {
    if real_labels.is_empty() || synthetic_labels.is_empty() {
        return Err(config_err("gradient matching needs nonempty batches"));
    }
    let names = model.param_names();
    let params: Vec<Tensor<T>> = model.params().values().cloned().collect();
    if params.iter().any(|p| !p.requires_grad_flag()) {
        return Err(config_err("gradient matching needs trainable parameters"));
    }
    let refs: Vec<&Tensor<T>> = params.iter().collect();

    let lr = softmax_cross_entropy(&model.forward(real, Mode::Train)?, real_labels)?;
    let gr = grad(&lr, &refs, false)?;
    let ls = softmax_cross_entropy(&model.forward(synthetic, Mode::Train)?, synthetic_labels)?;
    let gs = grad(&ls, &refs, true)?;
    for (n, g) in names.iter().zip(gr.iter().chain(&gs)) {
        if !g.is_finite() {
            return Err(Error::NonFinite {
                stage: "gradient matching".into(),
                detail: format!("gradient of `{n}`"),
            });
        }
    }
    let named = |gs: Vec<Tensor<T>>| names.iter().cloned().zip(gs).collect::<Vec<_>>();
    layerwise_cosine_distance(&named(gr.into_iter().map(|g| g.detach()).collect()), &named(gs))
}

/// Single-step gradient matching. Each iteration sums the per-class
/// matching losses, steps the synthetic pixels once, then trains the
/// network on `S` for `inner_steps` full-batch steps. The network is
/// re-initialized every `reinit_every` iterations.
///
/// Streams: `seed.split(0)` initializes `S`; network `j` is built from
/// `seed.split(2).split(j)`; iteration `i` samples from `seed.split(1).split(i)`.
pub fn distill_gm<T: Element>(real: &LabeledDataset<T>, config: &DistillConfig) -> Result<DistillOutcome<T>> {
    config.validate()?;
    if config.method != Method::GradMatch {
        return Err(config_err(format!("distill_gm called with method {}", config.method)));
    }
    let root = PrngState::new(config.seed);
    let mut syn = init_synthetic(real, config.ipc, config.init, root.split(0))?;
    let labels_before = syn.labels_hash();
    let mut opt = SgdMomentum::new(T::of(config.lr_images), T::of(config.momentum_images));
    let [_, h, w] = syn.image_shape();
    let mut trace = Vec::with_capacity(config.iterations);
    let mut siamese_log = Vec::new();
    let start = Instant::now();
    let mut model: Option<(ModelState<T>, SgdMomentum<T>)> = None;

    for it in 0..config.iterations {
        if it % config.reinit_every == 0 {
            let j = (it / config.reinit_every) as u64;
            model = Some((
                build_model(&config.model, root.split(2).split(j))?,
                SgdMomentum::new(T::of(config.inner_lr), T::of(0.5)),
            ));
        }
        let (net, net_opt) = model.as_mut().expect("built at iteration 0");
        let it_rng = root.split(1).split(it as u64);
        let mut batch_rng = it_rng.split(1);
        let mut aug_rng = it_rng.split(2);

        let mut loss: Option<Tensor<T>> = None;
        for c in 0..syn.class_count {
            let mut r = sample_class(real, c, config.real_batch, &mut batch_rng)?;
            let range = syn.class_range(c);
            let mut s = index_select0(&syn.images, &range.collect::<Vec<_>>())?;
            if let Some(aug) = &config.augment {
                let p = sample_aug_params(aug, h, w, &mut aug_rng)?;
                r = apply_augment(&r, &p)?;
                s = apply_augment(&s, &p)?;
                siamese_log.push(SiameseLogEntry {
                    iteration: it,
                    class: c,
                    real: p.clone(),
                    synthetic: p,
                });
            }
            let (nr, ns) = (r.shape()[0], s.shape()[0]);
            let l = grad_match_loss(net, &r, &vec![c; nr], &s, &vec![c; ns])?;
            loss = Some(match loss {
                Some(acc) => acc.add(&l)?,
                None => l,
            });
        }
        let loss = loss.expect("at least one class");
        check_finite(&loss, "gradient-matching loss", it)?;
        let g = grad(&loss, &[&syn.images], false)?.remove(0);
        check_finite(&g, "gradient-matching image gradient", it)?;
        opt.step("images", &mut syn.images, &g)?;
        clamp_images(&mut syn)?;

        let frozen = syn.images.detach();
        for _ in 0..config.inner_steps {
            let l = softmax_cross_entropy(&net.forward(&frozen, Mode::Train)?, syn.labels())?;
            let names = net.param_names();
            let params: Vec<Tensor<T>> = net.params().values().cloned().collect();
            let gs = grad(&l, &params.iter().collect::<Vec<_>>(), false)?;
            let named: Vec<(String, Tensor<T>)> = names.into_iter().zip(gs).collect();
            net.apply_gradients(net_opt, &named)?;
        }

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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, NormKind};

    fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = PrngState::new(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| r.next_uniform()).collect()).unwrap()
    }

    fn net() -> ModelState<f64> {
        let cfg = ModelConfig::convnet(4, 2, NormKind::Instance, 2, [3, 8, 8]);
        build_model(&cfg, PrngState::new(3)).unwrap()
    }

    #[test]
    fn identical_batches_match() {
        let mut m = net();
        let x = rand(&[2, 3, 8, 8], 1);
        let l = grad_match_loss(&mut m, &x, &[0, 1], &x, &[0, 1]).unwrap().item();
        assert!(l.abs() <= 1e-6, "{l}");
    }

    #[test]
    fn per_layer_terms_are_bounded_and_scale_invariant() {
        let mut m = net();
        let (r, s) = (rand(&[2, 3, 8, 8], 1), rand(&[2, 3, 8, 8], 2));
        let l = grad_match_loss(&mut m, &r, &[0, 1], &s, &[1, 0]).unwrap().item();
        let layers = m.params().len() as f64;
        assert!((0.0..=2.0 * layers).contains(&l));

        // doubling the synthetic classification loss doubles every gradient
        let params: Vec<Tensor<f64>> = m.params().values().cloned().collect();
        let refs: Vec<&Tensor<f64>> = params.iter().collect();
        let names = m.param_names();
        let grads = |x: &Tensor<f64>, y: &[usize], k: f64, m: &mut ModelState<f64>| {
            let l = softmax_cross_entropy(&m.forward(x, Mode::Train).unwrap(), y)
                .unwrap()
                .scale(k);
            names
                .iter()
                .cloned()
                .zip(grad(&l, &refs, false).unwrap())
                .collect::<Vec<_>>()
        };
        let gr = grads(&r, &[0, 1], 1.0, &mut m);
        let g1 = grads(&s, &[1, 0], 1.0, &mut m);
        let g2 = grads(&s, &[1, 0], 2.0, &mut m);
        let d1 = layerwise_cosine_distance(&gr, &g1).unwrap().item();
        let d2 = layerwise_cosine_distance(&gr, &g2).unwrap().item();
        assert!((d1 - d2).abs() < 1e-12);
        assert!((d1 - l).abs() < 1e-12);
        for (name, g) in &g1 {
            let one = [(name.clone(), g.clone())];
            let pair = [(name.clone(), gr.iter().find(|(n, _)| n == name).unwrap().1.clone())];
            let t = layerwise_cosine_distance(&pair, &one).unwrap().item();
            // collinear gradients may round a hair outside the bounds
            assert!((-1e-12..=2.0 + 1e-12).contains(&t), "{name}: {t}");
        }
    }

    #[test]
    fn one_pixel_step_reduces_the_loss() {
        // frozen toy instance: K=2, IPC=1
        let mut m = net();
        let r = rand(&[4, 3, 8, 8], 4);
        let s = rand(&[2, 3, 8, 8], 5).requires_grad();
        let loss = grad_match_loss(&mut m, &r, &[0, 0, 1, 1], &s, &[0, 1]).unwrap();
        let g = grad(&loss, &[&s], false).unwrap().remove(0);
        let stepped = s.detach().sub(&g.scale(0.05)).unwrap();
        let after = grad_match_loss(&mut m, &r, &[0, 0, 1, 1], &stepped, &[0, 1]).unwrap();
        assert!(after.item() < loss.item(), "{} -> {}", loss.item(), after.item());
    }
}
