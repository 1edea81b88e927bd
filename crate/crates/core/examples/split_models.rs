//! Builds each model family, lists its blocks and checks that running the
//! rear section on the front's output reproduces the full forward pass at
//! every legal boundary.
//!
//! cargo run -p elf-core --example split_models

use elf::models::{build_model, param_count, ModelConfig, ModelState, NormKind, SplitPoint};
use elf_tensor::{PrngState, Tensor};

fn main() -> elf::Result<()> {
    let shape = [3, 32, 32];
    let families = [
        ModelConfig::convnet(32, 3, NormKind::Instance, 10, shape),
        ModelConfig::mini_vgg(8, NormKind::Batch, 10, shape),
        ModelConfig::mini_resnet(8, NormKind::Batch, 10, shape),
    ];
    let mut rng = PrngState::new(7);
    let x: Tensor<f64> = Tensor::from_vec(
        &[2, 3, 32, 32],
        (0..2 * 3 * 32 * 32).map(|_| rng.next_uniform()).collect(),
    )
    .unwrap();
    for cfg in &families {
        let m: ModelState<f64> = build_model(cfg, PrngState::new(0))?;
        let default = SplitPoint::default_for(cfg)?;
        println!(
            "{}: {} parameters, default split after block {}",
            cfg.label(),
            param_count(cfg)?,
            default.block_index
        );
        for (b, name) in m.block_names().iter().enumerate() {
            println!("  {b:>2} {name:<10} -> {:?}", m.block_output_shape(b + 1));
        }
        let full = m.forward_eval(&x)?;
        let mut worst: f64 = 0.0;
        for b in 1..m.num_blocks() {
            let (front, rear) = m.split(SplitPoint::new(b))?;
            let y = rear.forward_eval(&m, &front.forward_eval(&m, &x)?)?;
            worst = worst.max(y.max_abs_diff(&full));
        }
        println!("  worst split/full difference {worst:.1e}");
    }
    // the first conv of a residual block cannot be a boundary
    match SplitPoint::named(&families[2], "conv5_1") {
        Err(e) => println!("{e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
