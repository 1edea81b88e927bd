//! Single-step gradient matching with siamese augmentation on both branches.
//!
//! cargo run -p elf-core --example distill_gradmatch -- [iterations]

use elf::data::{generate_toy_split, AugConfig, LabeledDataset, ToyShapesConfig};
use elf::distill::{distill, DistillConfig};
use elf::models::{ModelConfig, NormKind};

fn main() -> elf::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let toy = ToyShapesConfig {
        samples_per_class: 50,
        ..Default::default()
    };
    let (train, _): (LabeledDataset, LabeledDataset) = generate_toy_split(&toy)?;
    let mut cfg = DistillConfig::grad_match(
        ModelConfig::convnet(16, 3, NormKind::Instance, 4, [3, 16, 16]),
        2,
        iterations,
        0,
    );
    cfg.augment = Some(AugConfig::default());
    let out = distill(&train, &cfg)?;
    for t in out.trace.iter().step_by((iterations / 5).max(1)) {
        println!(
            "iteration {:>4}  matching loss {:.4}  ({:.0} ms)",
            t.iteration, t.loss, t.wall_ms
        );
    }
    // labels never move during distillation
    assert_eq!(out.labels_hash.0, out.labels_hash.1);
    if let Some(e) = out.siamese_log.first() {
        println!("class {} shared augmentation: {:?}", e.class, e.real);
        assert_eq!(e.real, e.synthetic);
    }
    Ok(())
}
