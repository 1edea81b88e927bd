use std::io::BufWriter;
use std::path::Path;

use elf_tensor::{Element, Tensor};

use crate::error::{shape_err, Error, IoContext, Result};

/// Grid geometry: `rows` of `cols` tiles separated by `pad` black pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PngGridLayout {
    pub rows: usize,
    pub cols: usize,
    pub pad: usize,
}

impl PngGridLayout {
    /// One row per class with `ipc` images each.
    pub fn per_class(classes: usize, ipc: usize) -> Self {
        Self {
            rows: classes,
            cols: ipc,
            pad: 1,
        }
    }
}

/// Renders `images` (`N×C×H×W` in `[0, 1]`, `C` of 1 or 3) row-major into an
/// 8-bit PNG. Values are clamped, then rounded to the nearest byte.
pub fn save_png_grid<T: Element>(images: &Tensor<T>, layout: PngGridLayout, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (pixels, width, height, color) = render_grid(images, layout)?;
    let file = std::fs::File::create(path).at(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(&pixels).map_err(png_err)?;
    w.finish().map_err(png_err)
}

fn render_grid<T: Element>(
    images: &Tensor<T>,
    layout: PngGridLayout,
) -> Result<(Vec<u8>, usize, usize, png::ColorType)> {
    let &[n, c, h, w] = images.shape() else {
        return Err(shape_err(format!("image grid expects NCHW, got {:?}", images.shape())));
    };
    if c != 1 && c != 3 {
        return Err(shape_err(format!("image grid needs 1 or 3 channels, got {c}")));
    }
    if n != layout.rows * layout.cols {
        return Err(shape_err(format!(
            "{n} images do not fill a {}×{} grid",
            layout.rows, layout.cols
        )));
    }
    let width = layout.cols * w + (layout.cols + 1) * layout.pad;
    let height = layout.rows * h + (layout.rows + 1) * layout.pad;
    let mut pixels = vec![0u8; width * height * c];
    let data = images.data();
    for i in 0..n {
        let (r, col) = (i / layout.cols, i % layout.cols);
        let (oy, ox) = (layout.pad + r * (h + layout.pad), layout.pad + col * (w + layout.pad));
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = data[((i * c + ch) * h + y) * w + x].as_f64();
                    pixels[((oy + y) * width + ox + x) * c + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
    }
    let color = if c == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    };
    Ok((pixels, width, height, color))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let dir = std::env::temp_dir().join(format!("elf-grid-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let v: Vec<f32> = (0..4 * 3 * 2 * 2).map(|i| i as f32 / 47.0).collect();
        let imgs = Tensor::from_vec(&[4, 3, 2, 2], v).unwrap();
        let path = dir.join("g.png");
        save_png_grid(&imgs, PngGridLayout::per_class(2, 2), &path).unwrap();

        let dec = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(&path).unwrap()));
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (7, 7));
        // image 3 (row 1, col 1), channel 0, pixel (0, 0) lands at (4, 4)
        let px = (4 * 7 + 4) * 3;
        assert_eq!(buf[px], (imgs.data()[36] * 255.0).round() as u8);
        assert_eq!(buf[0], 0);
        assert!(save_png_grid(&imgs, PngGridLayout::per_class(3, 2), &path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
