//! Reads a CIFAR-10 binary batch. Without an argument it round-trips a small
//! in-memory batch through the byte format instead.
//!
//! cargo run -p elf-core --example cifar_loader -- path/to/data_batch_1.bin

use elf::data::{encode_cifar10, load_cifar10_binary, parse_cifar10, LabeledDataset, CIFAR10_RECORD};
use elf_tensor::{PrngState, Tensor};

fn main() -> elf::Result<()> {
    let ds: LabeledDataset = match std::env::args().nth(1) {
        Some(path) => load_cifar10_binary(&path)?,
        None => {
            let mut rng = PrngState::new(0);
            let n = 6;
            let pixels = (0..n * 3072).map(|_| rng.next_below(256) as f32 / 255.0).collect();
            let fake = LabeledDataset::new(
                Tensor::from_vec(&[n, 3, 32, 32], pixels).unwrap(),
                (0..n).map(|i| i % 10).collect(),
                10,
            )?;
            let bytes = encode_cifar10(&fake)?;
            println!(
                "encoded {} records of {CIFAR10_RECORD} bytes",
                bytes.len() / CIFAR10_RECORD
            );
            let back = parse_cifar10(&bytes)?;
            assert!(back.images.bit_eq(&fake.images));
            back
        }
    };
    let mut counts = [0usize; 10];
    for &l in &ds.labels {
        counts[l] += 1;
    }
    println!(
        "{} images {:?}, per-class counts {counts:?}",
        ds.len(),
        ds.image_shape()
    );

    // a truncated file is an error, not a short dataset
    let bytes = encode_cifar10(&ds.subset(&[0])?)?;
    match parse_cifar10::<f32>(&bytes[..bytes.len() - 1]) {
        Err(e) => println!("truncated input rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
