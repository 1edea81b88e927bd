//! Procedural "toy shapes": one shape family per class, drawn with random
//! colors over a random dark background. Color is therefore no class cue;
//! only the silhouette is.
//!
//! Rendering is a pure function of [`ShapeParams`]: the shape's coverage of
//! each pixel is estimated with 2×2 supersampling and blended between the
//! background and foreground colors, then Gaussian pixel noise is added and
//! the result clamped to `[0, 1]`.

use elf_tensor::{Element, PrngState, Tensor};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Disk,
    Square,
    Triangle,
    Plus,
    Ring,
    Bars,
    Cross,
    Diamond,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 8] = [
        ShapeFamily::Disk,
        ShapeFamily::Square,
        ShapeFamily::Triangle,
        ShapeFamily::Plus,
        ShapeFamily::Ring,
        ShapeFamily::Bars,
        ShapeFamily::Cross,
        ShapeFamily::Diamond,
    ];

    /// Whether the point `(u, v)`, in units of the shape radius relative to
    /// its center, lies inside the silhouette. `v` grows downwards.
    pub fn contains(self, u: f64, v: f64) -> bool {
        let (au, av) = (u.abs(), v.abs());
        match self {
            ShapeFamily::Disk => u * u + v * v <= 1.0,
            ShapeFamily::Square => au <= 0.8 && av <= 0.8,
            // apex at the top, base at the bottom
            ShapeFamily::Triangle => (-0.85..=0.85).contains(&v) && au <= 0.55 * (v + 0.85),
            ShapeFamily::Plus => (au <= 0.3 && av <= 0.95) || (av <= 0.3 && au <= 0.95),
            ShapeFamily::Ring => (0.3..=1.0).contains(&(u * u + v * v)),
            // two vertical bars with a gap between them
            ShapeFamily::Bars => av <= 0.9 && (0.3..=0.9).contains(&au),
            ShapeFamily::Cross => au <= 0.9 && av <= 0.9 && ((u - v).abs() <= 0.4 || (u + v).abs() <= 0.4),
            ShapeFamily::Diamond => au + av <= 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyShapesConfig {
    pub class_count: usize,
    /// Image side; images are `channels × resolution × resolution`.
    pub resolution: usize,
    pub channels: usize,
    pub samples_per_class: usize,
    pub test_samples_per_class: usize,
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ToyShapesConfig {
    fn default() -> Self {
        Self {
            class_count: 4,
            resolution: 16,
            channels: 3,
            samples_per_class: 200,
            test_samples_per_class: 100,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl ToyShapesConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.class_count) {
            return Err(config_err(format!(
                "toy shapes support 1 to 8 classes, got {}",
                self.class_count
            )));
        }
        if self.resolution < 8 {
            return Err(config_err(format!("toy resolution {} is below 8", self.resolution)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(config_err(format!(
                "toy images have 1 or 3 channels, got {}",
                self.channels
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(config_err(format!(
                "toy noise must be a finite non-negative level, got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

/// Everything that determines one rendered sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeParams {
    pub family: ShapeFamily,
    /// Radius in pixels.
    pub radius: f64,
    /// Integer placement offset from the image center, in pixels.
    pub offset: (i64, i64),
    pub foreground: [f64; 3],
    pub background: [f64; 3],
}

/// Placement jitter in pixels along each axis.
pub const MAX_JITTER: i64 = 2;

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn sample_params(family: ShapeFamily, resolution: usize, rng: &mut PrngState) -> ShapeParams {
    let mut jitter = || rng.next_below((2 * MAX_JITTER + 1) as usize) as i64 - MAX_JITTER;
    let offset = (jitter(), jitter());
    let radius = resolution as f64 * (0.26 + 0.08 * rng.next_uniform());
    let foreground = hsv(
        rng.next_uniform(),
        0.4 + 0.6 * rng.next_uniform(),
        0.65 + 0.35 * rng.next_uniform(),
    );
    let background = hsv(rng.next_uniform(), rng.next_uniform(), 0.35 * rng.next_uniform());
    ShapeParams {
        family,
        radius,
        offset,
        foreground,
        background,
    }
}

/// Renders `p` without noise into a `channels × side × side` buffer.
pub fn render_shape(p: &ShapeParams, channels: usize, side: usize) -> Vec<f64> {
    let center = side as f64 / 2.0;
    let (cx, cy) = (center + p.offset.0 as f64, center + p.offset.1 as f64);
    let mut coverage = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            let mut hits = 0;
            for (sy, sx) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                let u = (x as f64 + sx - cx) / p.radius;
                let v = (y as f64 + sy - cy) / p.radius;
                hits += p.family.contains(u, v) as u32;
            }
            coverage[y * side + x] = hits as f64 / 4.0;
        }
    }
    let mut out = Vec::with_capacity(channels * side * side);
    for ch in 0..channels {
        // grayscale images use the luma of the two colors
        let (fg, bg) = if channels == 1 {
            let luma = |c: [f64; 3]| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
            (luma(p.foreground), luma(p.background))
        } else {
            (p.foreground[ch], p.background[ch])
        };
        out.extend(coverage.iter().map(|&a| bg + a * (fg - bg)));
    }
    out
}

/// Generates `samples_per_class` images per class from the stream `stream`
/// of `config.seed`. Samples are grouped by class.
pub fn generate_toy_shapes<T: Element>(config: &ToyShapesConfig, stream: u64) -> Result<LabeledDataset<T>> {
    generate(config, stream, config.samples_per_class)
}

/// Train split (stream 0, `samples_per_class`) and test split (stream 1,
/// `test_samples_per_class`).
pub fn generate_toy_split<T: Element>(config: &ToyShapesConfig) -> Result<(LabeledDataset<T>, LabeledDataset<T>)> {
    Ok((
        generate(config, 0, config.samples_per_class)?,
        generate(config, 1, config.test_samples_per_class)?,
    ))
}

fn generate<T: Element>(config: &ToyShapesConfig, stream: u64, per_class: usize) -> Result<LabeledDataset<T>> {
    config.validate()?;
    let (k, c, s) = (config.class_count, config.channels, config.resolution);
    let root = PrngState::new(config.seed).split(stream);
    let noise = Normal::new(0.0, config.noise).map_err(|e| config_err(e.to_string()))?;
    let mut pixels = Vec::with_capacity(k * per_class * c * s * s);
    let mut labels = Vec::with_capacity(k * per_class);
    for class in 0..k {
        let family = ShapeFamily::ALL[class];
        for i in 0..per_class {
            let mut rng = root.split(((class as u64) << 32) | i as u64);
            let params = sample_params(family, s, &mut rng);
            let mut img = render_shape(&params, c, s);
            if config.noise > 0.0 {
                for v in &mut img {
                    *v += noise.sample(&mut rng);
                }
            }
            pixels.extend(img.into_iter().map(|v| T::of(v.clamp(0.0, 1.0))));
            labels.push(class);
        }
    }
    LabeledDataset::new(Tensor::from_vec(&[k * per_class, c, s, s], pixels)?, labels, k)
}
