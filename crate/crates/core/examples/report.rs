//! Turns a finished run directory into CSV, JSON and plot tables and sets
//! the desk-scale matrix beside the published reference.
//!
//! cargo run -p elf-core --example report -- out/toy-cross-arch [DATASET/METHOD]

use std::path::PathBuf;

use elf::experiment::{
    cross_arch_csv, cross_arch_matrix, emit_report, gold_comparison_text, gold_cross_arch, read_report_json,
    ReportFormat,
};

fn main() -> elf::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(dir) = args.next().map(PathBuf::from) else {
        // nothing to read: show what the reference table holds
        for g in gold_cross_arch().iter().filter(|g| g.dataset == "CIFAR-10") {
            println!("{:<8} {:<12} {:+.2}", g.method, g.eval_model, g.gain());
        }
        return Ok(());
    };
    let gold = args.next().unwrap_or_else(|| "CIFAR-10/DM".into());
    let (dataset, method) = gold.split_once('/').unwrap_or((gold.as_str(), "DM"));

    let records = read_report_json(dir.join("records.json"))?;
    for format in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Plotdata] {
        for path in emit_report(&records, format, &dir.join("report"))? {
            println!("wrote {}", path.display());
        }
    }
    let rows = cross_arch_matrix(&records)?;
    print!("{}", cross_arch_csv(&rows));
    println!();
    print!("{}", gold_comparison_text(&rows, dataset, method));
    Ok(())
}
