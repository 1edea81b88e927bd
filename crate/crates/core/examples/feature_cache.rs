//! Trains a small extractor on real data, caches its features for a
//! synthetic set and shows that the cache is tied to the exact pixels.
//!
//! cargo run -p elf-core --example feature_cache -- [cache.elfc]

use elf::data::{generate_toy_split, init_synthetic, InitMode, LabeledDataset, ToyShapesConfig};
use elf::elf::{extract_features, load_cache, save_cache, train_feature_extractor, ExtractorConfig};
use elf::models::{ModelConfig, NormKind};
use elf::train::TrainConfig;
use elf_tensor::PrngState;

fn main() -> elf::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "toy.elfc".into());
    let toy = ToyShapesConfig {
        samples_per_class: 64,
        ..Default::default()
    };
    let (train, _): (LabeledDataset, LabeledDataset) = generate_toy_split(&toy)?;
    let mut s = init_synthetic(&train, 4, InitMode::RealSample, PrngState::new(0))?;

    let ext = ExtractorConfig {
        model: ModelConfig::convnet(16, 2, NormKind::Instance, 4, [3, 16, 16]),
        train: TrainConfig {
            epochs: 5,
            batch_size: Some(32),
            ..Default::default()
        },
        checkpoint_epochs: vec![0, 5],
        tap_block: None,
        seed: 0,
    };
    for ck in train_feature_extractor(&ext, &train, None, None)? {
        let cache = extract_features(&ck.model, ck.epoch, &s, None)?;
        println!(
            "epoch {:>2}: train accuracy {:.3}, features {:?} per image",
            ck.epoch,
            ck.train_accuracy,
            cache.feature_shape()
        );
        save_cache(&cache, &path)?;
    }

    let back = load_cache(&path, Some(&s))?;
    println!("reloaded {} entries from {path}", back.len());

    // one changed pixel and the cache no longer belongs to S
    let mut pixels = s.images.data().to_vec();
    pixels[0] += 0.5;
    s.set_images(elf_tensor::Tensor::from_vec(s.images.shape(), pixels).unwrap())?;
    match load_cache(&path, Some(&s)) {
        Err(e) => println!("after editing one pixel: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
