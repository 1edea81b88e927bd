//! Runs the finite-difference battery over every differentiable op in f64
//! and prints the worst relative error per op.
//!
//! cargo run --release -p elf-core --example gradcheck -- [shapes_per_op]

use elf_tensor::gradcheck::{run_battery, standard_batteries};

fn main() {
    let cases = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let mut worst: f64 = 0.0;
    for (name, seed, case) in standard_batteries() {
        let r = run_battery(name, seed, cases, 1e-6, case).expect("battery runs");
        worst = worst.max(r.max_relative_error);
        println!(
            "{:<16} {:>3} shapes  max rel err {:.2e}",
            r.name, r.cases, r.max_relative_error
        );
    }
    println!("worst {worst:.2e}");
}
