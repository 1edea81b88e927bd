//! Distribution matching on the toy shapes, then a quick check that a
//! ConvNet trained on `S` beats one trained on noise.
//!
//! cargo run -p elf-core --example distill_dm -- [iterations] [out_dir]

use elf::data::{generate_toy_split, init_synthetic, InitMode, LabeledDataset, ToyShapesConfig};
use elf::distill::{distill, write_distill_artifacts, DistillConfig};
use elf::models::{build_model, ModelConfig, ModelState, NormKind};
use elf::train::{evaluate_accuracy, train_classifier, TrainConfig};
use elf_tensor::PrngState;

fn main() -> elf::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().and_then(|a| a.parse().ok()).unwrap_or(100);
    let out = args.next().unwrap_or_else(|| "distill_dm_out".into());

    let (train, test): (LabeledDataset, LabeledDataset) = generate_toy_split(&ToyShapesConfig::default())?;
    let net = ModelConfig::convnet(32, 3, NormKind::Instance, 4, [3, 16, 16]);
    let cfg = DistillConfig::dm(net.clone(), 10, iterations, 0);
    let outcome = distill(&train, &cfg)?;
    let first = outcome.trace.first().map(|t| t.loss).unwrap_or(f64::NAN);
    let last = outcome.trace.last().map(|t| t.loss).unwrap_or(f64::NAN);
    println!("DM loss {first:.4} -> {last:.4} over {iterations} iterations");
    write_distill_artifacts(&outcome, &cfg, &out)?;
    println!("artifacts in {out}/");

    let noise = init_synthetic(&train, 10, InitMode::Noise, PrngState::new(0))?;
    let tc = TrainConfig {
        epochs: 300,
        lr: 0.01,
        ..Default::default()
    };
    for (name, s) in [("distilled", &outcome.synthetic), ("noise", &noise)] {
        let mut m: ModelState = build_model(&net, PrngState::new(1))?;
        train_classifier(&mut m, &s.to_labeled()?, &tc, PrngState::new(2), |_, _| Ok(()))?;
        println!("{name:>9}: test accuracy {:.3}", evaluate_accuracy(&m, &test)?);
    }
    Ok(())
}
