mod common;

use elf::elf::{train_evaluation_model, ElfConfig};
use elf::models::{ModelConfig, NormKind};
use elf::train::TrainConfig;
use elf_tensor::PrngState;

use common::{gradient_routing, toy_setup, TOY};

#[test]
fn each_term_trains_only_its_section() {
    for eval in [
        ModelConfig::convnet(8, 3, NormKind::Instance, 4, TOY),
        ModelConfig::mini_vgg(2, NormKind::Batch, 4, TOY),
        ModelConfig::mini_resnet(2, NormKind::Batch, 4, TOY),
    ] {
        let r = gradient_routing(&eval);
        assert!(r.front_names.is_disjoint(&r.rear_names));
        assert!(
            r.holds(),
            "{}: front {:?} rear {:?}",
            eval.label(),
            r.by_front,
            r.by_rear
        );
        // the full model's loss reaches every section
        assert_eq!(
            r.by_task.len(),
            r.front_names.len() + r.rear_names.len(),
            "{}",
            eval.label()
        );
    }
}

#[test]
fn zero_weights_follow_the_baseline_trajectory_for_fifty_steps() {
    let eval = ModelConfig::mini_vgg(2, NormKind::Batch, 4, TOY);
    let (s, cache, elf) = toy_setup(&eval, 4);
    let train = TrainConfig {
        epochs: 25,
        batch_size: Some(8),
        ..Default::default()
    };
    let zero = ElfConfig {
        lambda_front: 0.0,
        lambda_rear: 0.0,
        ..elf
    };
    let base = train_evaluation_model(&eval, &s, None, &ElfConfig::default(), &train, PrngState::new(9)).unwrap();
    let elf = train_evaluation_model(&eval, &s, Some(&cache), &zero, &train, PrngState::new(9)).unwrap();
    assert_eq!(base.traces.total.len(), 50);
    assert_eq!(base.traces.total, elf.traces.total);
    for ((name, a), b) in base.model.params().iter().zip(elf.model.params().values()) {
        assert!(a.bit_eq(b), "{name}");
    }
}

#[test]
fn elf_training_is_deterministic() {
    let eval = ModelConfig::mini_resnet(2, NormKind::Batch, 4, TOY);
    let (s, cache, elf) = toy_setup(&eval, 2);
    let train = TrainConfig {
        epochs: 3,
        batch_size: Some(4),
        ..Default::default()
    };
    let a = train_evaluation_model(&eval, &s, Some(&cache), &elf, &train, PrngState::new(4)).unwrap();
    let b = train_evaluation_model(&eval, &s, Some(&cache), &elf, &train, PrngState::new(4)).unwrap();
    assert_eq!(a.traces, b.traces);
    assert!(a.traces.front.iter().all(|v| v.is_finite()));
}
