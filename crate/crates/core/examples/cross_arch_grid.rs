//! Runs a cross-architecture experiment from a TOML file and prints the
//! baseline/ELF matrix. Finished cells are reused on a rerun.
//!
//! cargo run --release -p elf-core --example cross_arch_grid -- [config.toml] [--quick]
//!
//! `--quick` cuts seeds, epochs and iterations so the whole grid finishes in
//! about a minute; the numbers are then only a smoke test.

use elf::distill::Method;
use elf::experiment::{
    cross_arch_matrix, cross_arch_text, gold_eval_lr, run_experiment, DistillSpec, ExperimentConfig,
};

fn main() -> elf::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let quick = args.iter().any(|a| a == "--quick");
    let path = args
        .iter()
        .find(|a| !a.starts_with("--"))
        .cloned()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/toy_cross_arch.toml").into());
    let mut cfg = ExperimentConfig::from_toml_path(&path)?;
    if quick {
        cfg.seeds.truncate(2);
        cfg.train.epochs = 30;
        cfg.output_dir = cfg.output_dir.join("quick");
        if let DistillSpec::Run(d) = &mut cfg.distill {
            d.iterations = 20;
        }
        if let Some(e) = &mut cfg.extractor {
            e.train.epochs = 5;
        }
        for entry in cfg.grid.iter_mut() {
            if let Some(elf) = &mut entry.elf {
                elf.feature_epoch = 5;
            }
        }
    }
    if let DistillSpec::Run(d) = &cfg.distill {
        let reference = gold_eval_lr(if d.method == Method::Dm { "DM" } else { "GM" });
        println!(
            "evaluation lr {} (published protocol for this method: {reference})",
            cfg.train.lr
        );
    }

    let summary = run_experiment(&cfg)?;
    println!(
        "{} cells trained, {} reused, {} failed",
        summary.work.cells_trained,
        summary.work.cells_reused,
        summary.failures.len()
    );
    let rows = cross_arch_matrix(&summary.records)?;
    print!("{}", cross_arch_text(&rows));
    println!("results in {}", cfg.output_dir.display());
    Ok(())
}
