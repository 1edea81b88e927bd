//! Ablation of one evaluation architecture over a chosen axis.
//!
//! cargo run --release -p elf-core --example ablation -- [loss-terms|lambda|distance|feature-epoch[:0,10,30]|feature-source]
//!
//! Uses the toy config with short training so a run takes a few minutes.

use elf::elf::ElfConfig;
use elf::experiment::{ablation_grid, ablation_table, run_experiment, AblationKind, DistillSpec, ExperimentConfig};

fn main() -> elf::Result<()> {
    let kind: AblationKind = std::env::args().nth(1).unwrap_or_else(|| "loss-terms".into()).parse()?;
    let template = ExperimentConfig::from_toml_path(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/configs/toy_cross_arch.toml"
    ))?;
    let model = template.grid[0].model.clone();
    let base = ElfConfig {
        feature_epoch: 10,
        ..Default::default()
    };
    let mut cfg = ablation_grid(&template, &kind, &model, &base);
    cfg.seeds.truncate(2);
    cfg.train.epochs = 60;
    cfg.output_dir = template.output_dir.join("ablation");
    if let DistillSpec::Run(d) = &mut cfg.distill {
        d.iterations = 50;
    }
    if let Some(e) = &mut cfg.extractor {
        e.train.epochs = 10;
    }
    println!("{} rows x {} seeds", cfg.grid.len(), cfg.seeds.len());

    let summary = run_experiment(&cfg)?;
    print!("{}", ablation_table(&summary.records));
    Ok(())
}
