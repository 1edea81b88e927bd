//! Fixtures shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeSet;

use elf::data::{generate_toy_shapes, init_synthetic, InitMode, LabeledDataset, SyntheticDataset, ToyShapesConfig};
use elf::elf::{extract_features, front_loss, rear_loss, task_loss, ElfConfig, FeatureCache};
use elf::models::{build_model, ModelConfig, ModelState, NormKind};
use elf_tensor::{backward, Element, Gradients, PrngState, Tensor};

pub const TOY: [usize; 3] = [3, 16, 16];

pub fn toy_real(samples_per_class: usize) -> LabeledDataset {
    let cfg = ToyShapesConfig {
        samples_per_class,
        ..Default::default()
    };
    generate_toy_shapes(&cfg, 0).unwrap()
}

/// `S` drawn from real images plus a feature cache from a random ConvNet
/// whose output matches the shape of `eval`'s front section.
pub fn toy_setup(eval: &ModelConfig, ipc: usize) -> (SyntheticDataset, FeatureCache, ElfConfig) {
    let real = toy_real(ipc.max(4));
    let s = init_synthetic(&real, ipc, InitMode::RealSample, PrngState::new(1)).unwrap();
    let elf = ElfConfig::default();
    let m: ModelState = build_model(eval, PrngState::new(0)).unwrap();
    let (front, _) = m.split(elf.split_point(eval).unwrap()).unwrap();
    let out = front.output_shape(&m);
    // every ConvNet block halves the side
    let depth = (TOY[1] / out[1]).trailing_zeros() as usize;
    let ext_cfg = ModelConfig::convnet(out[0], depth, NormKind::Instance, 4, TOY);
    let ext: ModelState = build_model(&ext_cfg, PrngState::new(2)).unwrap();
    let cache = extract_features(&ext, 0, &s, None).unwrap();
    (s, cache, elf)
}

/// Parameter names whose gradient has a nonzero entry.
pub fn touched<T: Element>(model: &ModelState<T>, grads: &Gradients<T>) -> BTreeSet<String> {
    model
        .params()
        .iter()
        .filter(|(_, p)| grads.get(p).is_some_and(|g| g.data().iter().any(|v| v.as_f64() != 0.0)))
        .map(|(n, _)| n.clone())
        .collect()
}

pub struct Routing {
    pub front_names: BTreeSet<String>,
    pub rear_names: BTreeSet<String>,
    pub by_front: BTreeSet<String>,
    pub by_rear: BTreeSet<String>,
    pub by_task: BTreeSet<String>,
    /// Whether any backward pass produced a gradient for the cached features.
    pub cache_grad: bool,
}

impl Routing {
    pub fn holds(&self) -> bool {
        !self.by_front.is_empty()
            && self.by_front.is_subset(&self.front_names)
            && !self.by_rear.is_empty()
            && self.by_rear.is_subset(&self.rear_names)
            && self.by_task.iter().any(|n| self.front_names.contains(n))
            && self.by_task.iter().any(|n| self.rear_names.contains(n))
            && !self.cache_grad
    }
}

/// One step's worth of front, rear and task losses, each backpropagated
/// on its own.
pub fn gradient_routing(eval: &ModelConfig) -> Routing {
    let (s, cache, elf) = toy_setup(eval, 2);
    let mut model: ModelState = build_model(eval, PrngState::new(3)).unwrap();
    let (front, rear) = model.split(elf.split_point(eval).unwrap()).unwrap();
    let ids: Vec<usize> = (0..s.len()).collect();
    let labels = s.labels().to_vec();
    let x: Tensor = s.images.detach();

    let lf = front_loss(&mut model, &front, &cache, &x, &ids, &elf).unwrap();
    let gf = backward(&lf).unwrap();
    let lr = rear_loss(&model, &rear, &cache, &ids, &labels, &elf).unwrap();
    let gr = backward(&lr).unwrap();
    let lt = task_loss(&mut model, &x, &labels).unwrap();
    let gt = backward(&lt).unwrap();
    let feats = cache.features();
    Routing {
        front_names: front.param_names(&model).into_iter().collect(),
        rear_names: rear.param_names(&model).into_iter().collect(),
        by_front: touched(&model, &gf),
        by_rear: touched(&model, &gr),
        by_task: touched(&model, &gt),
        cache_grad: feats.requires_grad_flag() || gf.contains(feats) || gr.contains(feats) || gt.contains(feats),
    }
}
