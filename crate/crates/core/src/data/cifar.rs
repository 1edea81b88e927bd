//! CIFAR-10 binary batches: each record is one label byte followed by
//! 32×32 red, green and blue planes, row-major.

use std::path::Path;

use elf_tensor::{Element, Tensor};

use super::LabeledDataset;
use crate::error::{shape_err, Error, IoContext, Result};

const SIDE: usize = 32;
const PIXELS: usize = 3 * SIDE * SIDE;
pub const CIFAR10_RECORD: usize = 1 + PIXELS;
const CLASSES: usize = 10;

pub fn load_cifar10_binary<T: Element>(path: impl AsRef<Path>) -> Result<LabeledDataset<T>> {
    let path = path.as_ref();
    parse_cifar10(&std::fs::read(path).at(path)?)
}

pub fn parse_cifar10<T: Element>(bytes: &[u8]) -> Result<LabeledDataset<T>> {
    if bytes.len() % CIFAR10_RECORD != 0 {
        let complete = bytes.len() / CIFAR10_RECORD;
        return Err(Error::Format(format!(
            "truncated CIFAR-10 data: record {complete} starts at byte offset {} but only {} bytes remain",
            complete * CIFAR10_RECORD,
            bytes.len() - complete * CIFAR10_RECORD
        )));
    }
    let n = bytes.len() / CIFAR10_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * PIXELS);
    for (i, rec) in bytes.chunks_exact(CIFAR10_RECORD).enumerate() {
        if rec[0] as usize >= CLASSES {
            return Err(Error::Format(format!(
                "label byte {} at offset {} is not a CIFAR-10 class",
                rec[0],
                i * CIFAR10_RECORD
            )));
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| T::of(b as f64 / 255.0)));
    }
    LabeledDataset::new(Tensor::from_vec(&[n, 3, SIDE, SIDE], pixels)?, labels, CLASSES)
}

/// Inverse of [`parse_cifar10`]: pixels are rounded to the nearest byte.
pub fn encode_cifar10<T: Element>(dataset: &LabeledDataset<T>) -> Result<Vec<u8>> {
    if dataset.image_shape() != [3, SIDE, SIDE] {
        return Err(shape_err(format!(
            "CIFAR-10 images are 3×32×32, got {:?}",
            dataset.image_shape()
        )));
    }
    if dataset.labels.iter().any(|&l| l >= CLASSES) {
        return Err(Error::Format("CIFAR-10 labels must be below 10".into()));
    }
    let mut out = Vec::with_capacity(dataset.len() * CIFAR10_RECORD);
    for (i, &l) in dataset.labels.iter().enumerate() {
        out.push(l as u8);
        let img = &dataset.images.data()[i * PIXELS..(i + 1) * PIXELS];
        out.extend(img.iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut bytes = Vec::new();
        for (label, base) in [(3u8, 0usize), (9u8, 77usize)] {
            bytes.push(label);
            bytes.extend((0..PIXELS).map(|i| ((i * 7 + base) % 256) as u8));
        }
        bytes
    }

    #[test]
    fn parses_hand_built_records() {
        let ds = parse_cifar10::<f64>(&fixture()).unwrap();
        assert_eq!(ds.labels, vec![3, 9]);
        assert_eq!(ds.images.shape(), &[2, 3, 32, 32]);
        // red plane row 0 col 1 of record 0; blue plane last pixel of record 1
        assert_eq!(ds.images.data()[1], 7.0 / 255.0);
        let last = PIXELS - 1;
        assert_eq!(ds.images.data()[PIXELS + last], ((last * 7 + 77) % 256) as f64 / 255.0);
        assert_eq!(ds.class_indices(3), &[0]);
        assert_eq!(ds.class_indices(9), &[1]);
    }

    #[test]
    fn empty_and_malformed_files() {
        assert!(parse_cifar10::<f32>(&[]).unwrap().is_empty());
        let err = parse_cifar10::<f32>(&vec![0u8; 3074]).unwrap_err().to_string();
        assert!(err.contains("offset 3073"), "{err}");
        let mut bad = fixture();
        bad[CIFAR10_RECORD] = 10;
        let err = parse_cifar10::<f32>(&bad).unwrap_err().to_string();
        assert!(err.contains("offset 3073"), "{err}");
    }

    #[test]
    fn encode_round_trip_is_exact() {
        let bytes = fixture();
        let ds = parse_cifar10::<f32>(&bytes).unwrap();
        assert_eq!(encode_cifar10(&ds).unwrap(), bytes);
    }
}
