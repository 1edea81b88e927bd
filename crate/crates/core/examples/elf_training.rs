//! Trains a MiniVGG on a synthetic set with and without the feature terms
//! and prints the per-term loss curves.
//!
//! cargo run -p elf-core --example elf_training -- [distance]

use elf::data::{generate_toy_split, init_synthetic, InitMode, LabeledDataset, ToyShapesConfig};
use elf::elf::{
    extract_features, train_evaluation_model, train_feature_extractor, Distance, ElfConfig, ExtractorConfig,
};
use elf::models::{ModelConfig, NormKind};
use elf::train::{evaluate_accuracy, TrainConfig};
use elf_tensor::PrngState;

fn main() -> elf::Result<()> {
    let distance: Distance = std::env::args().nth(1).unwrap_or_else(|| "ce".into()).parse()?;
    let shape = [3, 16, 16];
    let toy = ToyShapesConfig {
        samples_per_class: 100,
        ..Default::default()
    };
    let (train, test): (LabeledDataset, LabeledDataset) = generate_toy_split(&toy)?;
    let s = init_synthetic(&train, 5, InitMode::RealSample, PrngState::new(0))?;

    let eval = ModelConfig::mini_vgg(8, NormKind::Batch, 4, shape);
    let elf = ElfConfig {
        distance,
        feature_epoch: 10,
        ..Default::default()
    };
    // the default VGG split leaves a 64-channel 2×2 map, which a width-64
    // depth-3 ConvNet produces on 16×16 inputs
    let ext = ExtractorConfig {
        model: ModelConfig::convnet(64, 3, NormKind::Instance, 4, shape),
        train: TrainConfig {
            epochs: 10,
            batch_size: Some(64),
            lr_decay_at_half: false,
            ..Default::default()
        },
        checkpoint_epochs: vec![10],
        tap_block: None,
        seed: 0,
    };
    let extractor = train_feature_extractor(&ext, &train, None, None)?.remove(0);
    let cache = extract_features(&extractor.model, extractor.epoch, &s, None)?;

    let tc = TrainConfig {
        epochs: 100,
        lr: 0.01,
        ..Default::default()
    };
    for (name, c) in [("baseline", None), ("elf", Some(&cache))] {
        let out = train_evaluation_model(&eval, &s, c, &elf, &tc, PrngState::new(0))?;
        let t = &out.traces;
        let fmt = |v: &[f64]| match (v.first(), v.last()) {
            (Some(a), Some(b)) => format!("{a:.3} -> {b:.3}"),
            _ => "-".into(),
        };
        println!(
            "{name:>8}: accuracy {:.3} | task {} | front {} | rear {}",
            evaluate_accuracy(&out.model, &test)?,
            fmt(&t.task),
            fmt(&t.front),
            fmt(&t.rear)
        );
    }
    Ok(())
}
