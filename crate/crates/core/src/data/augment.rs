//! Differentiable augmentation: horizontal flip, shift (pad-and-translate),
//! cutout and bilinear scaling.
//!
//! Parameters are drawn once per batch, so the same [`AugParams`] can be
//! applied to a real and a synthetic batch of different sizes (siamese use).
//! Training on fixed images draws per image instead ([`augment_per_sample`]).
//! Every transform is linear in the pixels: flips, shifts and scaling are
//! [`SparseMap`]s and cutout is a mask multiply, so gradients reach the input.

use std::sync::Arc;

use elf_tensor::ops::{mul, sparse_map, SparseMap};
use elf_tensor::{Element, PrngState, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    #[serde(alias = "flip")]
    HFlip,
    #[serde(alias = "shift", alias = "crop")]
    ShiftCrop,
    Cutout,
    Scale,
}

/// Largest shift as a fraction of the image side.
pub const MAX_SHIFT_FRACTION: f64 = 0.25;
pub const SCALE_RANGE: (f64, f64) = (0.8, 1.2);

/// Sampling ranges for [`sample_aug_params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugConfig {
    pub ops: Vec<AugKind>,
    /// Shifts are drawn uniformly from `±round(shift_fraction · side)` pixels.
    pub shift_fraction: f64,
    /// Cutout squares have side `round(cutout_fraction · side)`.
    pub cutout_fraction: f64,
    /// Per-axis scale factors are drawn from `[1/max_scale, max_scale]`
    /// intersected with the allowed range.
    pub max_scale: f64,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            ops: vec![AugKind::ShiftCrop, AugKind::Scale, AugKind::HFlip, AugKind::Cutout],
            shift_fraction: 0.125,
            cutout_fraction: 0.5,
            max_scale: 1.2,
        }
    }
}

impl AugConfig {
    pub fn none() -> Self {
        Self {
            ops: Vec::new(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_SHIFT_FRACTION).contains(&self.shift_fraction) {
            return Err(config_err(format!(
                "shift fraction {} outside [0, {MAX_SHIFT_FRACTION}]",
                self.shift_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.cutout_fraction) {
            return Err(config_err(format!(
                "cutout fraction {} outside [0, 1]",
                self.cutout_fraction
            )));
        }
        if !(1.0..=SCALE_RANGE.1).contains(&self.max_scale) {
            return Err(config_err(format!(
                "max scale {} outside [1, {}]",
                self.max_scale, SCALE_RANGE.1
            )));
        }
        Ok(())
    }
}

/// One sampled transform, shared by every image of the batch it is applied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugTransform {
    HFlip {
        flip: bool,
    },
    /// Output pixel `(y, x)` reads input `(y + dy, x + dx)`; outside is zero.
    ShiftCrop {
        dx: i64,
        dy: i64,
    },
    /// Zeroes the `size × size` square with top-left corner `(y0, x0)`,
    /// clipped to the image.
    Cutout {
        y0: usize,
        x0: usize,
        size: usize,
    },
    /// Zooms about the image center by `sy`, `sx` with bilinear sampling.
    Scale {
        sy: f64,
        sx: f64,
    },
}

/// The transforms of one augmentation call, in application order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AugParams {
    pub transforms: Vec<AugTransform>,
}

pub fn sample_aug_params(config: &AugConfig, height: usize, width: usize, rng: &mut PrngState) -> Result<AugParams> {
    config.validate()?;
    let mut transforms = Vec::with_capacity(config.ops.len());
    for op in &config.ops {
        transforms.push(match op {
            AugKind::HFlip => AugTransform::HFlip {
                flip: rng.next_u64() & 1 == 1,
            },
            AugKind::ShiftCrop => {
                let mut draw = |side: usize| {
                    let m = (config.shift_fraction * side as f64).round() as i64;
                    rng.next_below((2 * m + 1) as usize) as i64 - m
                };
                let dy = draw(height);
                AugTransform::ShiftCrop { dx: draw(width), dy }
            }
            AugKind::Cutout => {
                let size = (config.cutout_fraction * height.min(width) as f64).round() as usize;
                // the square's center is uniform over the image
                let cy = rng.next_below(height);
                let cx = rng.next_below(width);
                AugTransform::Cutout {
                    y0: cy.saturating_sub(size / 2),
                    x0: cx.saturating_sub(size / 2),
                    size,
                }
            }
            AugKind::Scale => {
                let lo = (1.0 / config.max_scale).max(SCALE_RANGE.0);
                let hi = config.max_scale;
                let sy = lo + (hi - lo) * rng.next_uniform();
                let sx = lo + (hi - lo) * rng.next_uniform();
                AugTransform::Scale { sy, sx }
            }
        });
    }
    Ok(AugParams { transforms })
}

/// Applies `params` to an `N×C×H×W` batch.
pub fn apply_augment<T: Element>(x: &Tensor<T>, params: &AugParams) -> Result<Tensor<T>> {
    if x.ndim() != 4 {
        return Err(shape_err(format!(
            "augmentation expects NCHW input, got {:?}",
            x.shape()
        )));
    }
    let [n, c, h, w]: [usize; 4] = x.shape().try_into().expect("rank checked");
    let planes = n * c;
    let mut out = x.clone();
    for t in &params.transforms {
        out = match *t {
            AugTransform::HFlip { flip: false } => out,
            AugTransform::HFlip { flip: true } => remap(&out, planes, h, w, |y, xx| vec![(y * w + (w - 1 - xx), 1.0)])?,
            AugTransform::ShiftCrop { dx, dy } => {
                for (d, side) in [(dx, w), (dy, h)] {
                    if d.unsigned_abs() as f64 > MAX_SHIFT_FRACTION * side as f64 {
                        return Err(config_err(format!("shift {d} exceeds 25% of side {side}")));
                    }
                }
                if dx == 0 && dy == 0 {
                    out
                } else {
                    remap(&out, planes, h, w, |y, xx| {
                        let (sy, sx) = (y as i64 + dy, xx as i64 + dx);
                        if (0..h as i64).contains(&sy) && (0..w as i64).contains(&sx) {
                            vec![(sy as usize * w + sx as usize, 1.0)]
                        } else {
                            Vec::new()
                        }
                    })?
                }
            }
            AugTransform::Cutout { y0, x0, size } => {
                if size > h.max(w) {
                    return Err(config_err(format!("cutout size {size} exceeds the {h}×{w} image")));
                }
                if size == 0 {
                    out
                } else {
                    let mask: Vec<T> = (0..h * w)
                        .map(|i| {
                            let (y, xx) = (i / w, i % w);
                            let inside = (y0..y0 + size).contains(&y) && (x0..x0 + size).contains(&xx);
                            if inside {
                                T::zero()
                            } else {
                                T::one()
                            }
                        })
                        .collect();
                    mul(&out, &Tensor::from_vec(&[1, 1, h, w], mask)?)?
                }
            }
            AugTransform::Scale { sy, sx } => {
                for s in [sy, sx] {
                    if !(SCALE_RANGE.0..=SCALE_RANGE.1).contains(&s) {
                        return Err(config_err(format!(
                            "scale {s} outside [{}, {}]",
                            SCALE_RANGE.0, SCALE_RANGE.1
                        )));
                    }
                }
                remap(&out, planes, h, w, |y, xx| bilinear_row(y, xx, h, w, sy, sx))?
            }
        };
    }
    Ok(out)
}

/// Samples fresh parameters and applies them; returns the parameters for
/// logging or for reuse on a paired batch.
pub fn augment<T: Element>(x: &Tensor<T>, config: &AugConfig, rng: &mut PrngState) -> Result<(Tensor<T>, AugParams)> {
    if x.ndim() != 4 {
        return Err(shape_err(format!(
            "augmentation expects NCHW input, got {:?}",
            x.shape()
        )));
    }
    let params = sample_aug_params(config, x.shape()[2], x.shape()[3], rng)?;
    Ok((apply_augment(x, &params)?, params))
}

/// Independent parameters for every image of the batch. The result is a
/// constant: use it for training on fixed images, not for learning pixels.
pub fn augment_per_sample<T: Element>(x: &Tensor<T>, config: &AugConfig, rng: &mut PrngState) -> Result<Tensor<T>> {
    if x.ndim() != 4 {
        return Err(shape_err(format!(
            "augmentation expects NCHW input, got {:?}",
            x.shape()
        )));
    }
    let [n, c, h, w]: [usize; 4] = x.shape().try_into().expect("rank checked");
    let per = c * h * w;
    let mut data = Vec::with_capacity(n * per);
    for i in 0..n {
        let one = Tensor::from_slice(&[1, c, h, w], &x.data()[i * per..(i + 1) * per])?;
        data.extend_from_slice(augment(&one, config, rng)?.0.data());
    }
    Ok(Tensor::from_vec(x.shape(), data)?)
}

/// Input taps of output pixel `(y, x)` when zooming by `(sy, sx)` about the
/// center; samples outside the image contribute zero.
fn bilinear_row(y: usize, x: usize, h: usize, w: usize, sy: f64, sx: f64) -> Vec<(usize, f64)> {
    let src = |o: usize, side: usize, s: f64| (o as f64 + 0.5 - side as f64 / 2.0) / s + side as f64 / 2.0 - 0.5;
    let (fy, fx) = (src(y, h, sy), src(x, w, sx));
    let (y0, x0) = (fy.floor(), fx.floor());
    let (ty, tx) = (fy - y0, fx - x0);
    let mut taps = Vec::with_capacity(4);
    for (yy, wy) in [(y0, 1.0 - ty), (y0 + 1.0, ty)] {
        for (xx, wx) in [(x0, 1.0 - tx), (x0 + 1.0, tx)] {
            let wgt = wy * wx;
            if wgt > 0.0 && (0.0..h as f64).contains(&yy) && (0.0..w as f64).contains(&xx) {
                taps.push((yy as usize * w + xx as usize, wgt));
            }
        }
    }
    taps
}

/// Applies the same spatial map to every `h×w` plane.
fn remap<T: Element>(
    x: &Tensor<T>,
    planes: usize,
    h: usize,
    w: usize,
    taps: impl Fn(usize, usize) -> Vec<(usize, f64)>,
) -> Result<Tensor<T>> {
    let plane: Vec<Vec<(usize, f64)>> = (0..h * w).map(|i| taps(i / w, i % w)).collect();
    let rows = (0..planes).flat_map(|p| {
        plane
            .iter()
            .map(move |row| row.iter().map(|&(i, v)| (p * h * w + i, T::of(v))).collect::<Vec<_>>())
    });
    let map = SparseMap::from_rows(x.numel(), rows)?;
    Ok(sparse_map(x, Arc::new(map), x.shape())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use elf_tensor::gradcheck::check_gradients;

    fn batch(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = PrngState::new(seed);
        Tensor::from_vec(&[n, 2, 6, 6], (0..n * 72).map(|_| rng.next_uniform()).collect()).unwrap()
    }

    fn one(t: AugTransform) -> AugParams {
        AugParams { transforms: vec![t] }
    }

    #[test]
    fn flip_is_an_involution() {
        let x = batch(2, 1);
        let p = one(AugTransform::HFlip { flip: true });
        let once = apply_augment(&x, &p).unwrap();
        assert!(!once.bit_eq(&x));
        assert!(apply_augment(&once, &p).unwrap().bit_eq(&x));
        assert!(apply_augment(&x, &one(AugTransform::HFlip { flip: false }))
            .unwrap()
            .bit_eq(&x));
    }

    #[test]
    fn identities_and_shift_semantics() {
        let x = batch(1, 2);
        let cut0 = one(AugTransform::Cutout { y0: 2, x0: 2, size: 0 });
        assert!(apply_augment(&x, &cut0).unwrap().bit_eq(&x));
        let unit = one(AugTransform::Scale { sy: 1.0, sx: 1.0 });
        assert!(apply_augment(&x, &unit).unwrap().max_abs_diff(&x) < 1e-15);

        let y = apply_augment(&x, &one(AugTransform::ShiftCrop { dx: 1, dy: -1 })).unwrap();
        let (xd, yd) = (x.data(), y.data());
        assert_eq!(yd[6 + 2], xd[3]); // out (1, 2) reads in (0, 3)
        assert_eq!(yd[5], 0.0); // reads column 6: padding
        assert!(yd[..6].iter().all(|&v| v == 0.0)); // reads row −1

        let c = apply_augment(&x, &one(AugTransform::Cutout { y0: 4, x0: 4, size: 3 })).unwrap();
        assert_eq!(c.data()[4 * 6 + 4], 0.0);
        assert_eq!(c.data()[5 * 6 + 5], 0.0);
        assert_eq!(c.data()[3 * 6 + 3], x.data()[3 * 6 + 3]);
    }

    #[test]
    fn out_of_range_parameters_are_rejected() {
        let x = batch(1, 3);
        assert!(apply_augment(&x, &one(AugTransform::ShiftCrop { dx: 2, dy: 0 })).is_err());
        assert!(apply_augment(&x, &one(AugTransform::Scale { sy: 1.3, sx: 1.0 })).is_err());
        assert!(apply_augment(&x, &one(AugTransform::Scale { sy: 1.0, sx: 0.7 })).is_err());
        let bad = AugConfig {
            shift_fraction: 0.3,
            ..AugConfig::default()
        };
        assert!(sample_aug_params(&bad, 8, 8, &mut PrngState::new(0)).is_err());
    }

    #[test]
    fn shift_gradient_matches_finite_differences() {
        let x = batch(2, 4);
        let p = one(AugTransform::ShiftCrop { dx: -1, dy: 1 });
        let err = check_gradients(|t| Ok(apply_augment(&t[0], &p).unwrap().sum_all()), &[x.clone()], 1e-6)
            .unwrap()
            .max_relative_error();
        assert!(err < 1e-3, "{err}");
        let p = AugParams {
            transforms: vec![
                AugTransform::Scale { sy: 1.1, sx: 0.9 },
                AugTransform::HFlip { flip: true },
                AugTransform::Cutout { y0: 1, x0: 0, size: 2 },
            ],
        };
        let err = check_gradients(|t| Ok(apply_augment(&t[0], &p).unwrap().sum_all()), &[x.clone()], 1e-6)
            .unwrap()
            .max_relative_error();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn siamese_batches_share_parameters() {
        let cfg = AugConfig::default();
        let mut rng = PrngState::new(9);
        let p = sample_aug_params(&cfg, 6, 6, &mut rng).unwrap();
        let real = apply_augment(&batch(5, 1), &p).unwrap();
        let syn = apply_augment(&batch(2, 1), &p).unwrap();
        // the first two images agree because the inputs agree
        assert!(real.data()[..144].iter().zip(syn.data()).all(|(a, b)| a == b));
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<AugParams>(&json).unwrap(), p);
    }

    #[test]
    fn per_sample_draws_differ_across_images() {
        let cfg = AugConfig {
            ops: vec![AugKind::ShiftCrop],
            ..AugConfig::default()
        };
        let one = batch(1, 1);
        let same = Tensor::from_vec(&[8, 2, 6, 6], one.data().repeat(8)).unwrap();
        let mut rng = PrngState::new(3);
        let out = augment_per_sample(&same, &cfg, &mut rng).unwrap();
        let first = &out.data()[..72];
        assert!(out.data().chunks(72).any(|c| c != first));
        assert!(!out.requires_grad_flag());
        // image i gets the i-th draw of the stream
        let mut rng = PrngState::new(3);
        let solo = augment(&one, &cfg, &mut rng).unwrap().0;
        assert_eq!(solo.data(), first);
    }
}
