//! Generates the procedural shapes dataset and writes a PNG contact sheet.
//!
//! cargo run -p elf-core --example toy_dataset -- [out.png]

use elf::data::{generate_toy_split, save_png_grid, LabeledDataset, PngGridLayout, ToyShapesConfig};

fn main() -> elf::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "toy_shapes.png".into());
    let cfg = ToyShapesConfig::default();
    let (train, test): (LabeledDataset, LabeledDataset) = generate_toy_split(&cfg)?;
    println!(
        "{} classes, {} train / {} test images of {:?}",
        cfg.class_count,
        train.len(),
        test.len(),
        train.image_shape()
    );
    println!("train hash {}", &train.content_hash()[..16]);

    // first eight images of every class, one class per row
    let per_row = 8;
    let ids: Vec<usize> = (0..cfg.class_count)
        .flat_map(|c| train.class_indices(c)[..per_row].to_vec())
        .collect();
    let sheet = train.subset(&ids)?;
    save_png_grid(&sheet.images, PngGridLayout::per_class(cfg.class_count, per_row), &out)?;
    println!("wrote {out}");
    Ok(())
}
