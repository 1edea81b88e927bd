use elf_tensor::ops::{add, add_scalar, div, mean_axes, mul, reshape, sqrt, square, sub};
use elf_tensor::{Element, Tensor};

use crate::error::{config_err, shape_err, Result};

/// Running moments of one batch-norm layer.
#[derive(Debug, Clone)]
pub struct RunningStats<T: Element = f32> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Element> RunningStats<T> {
    /// Mean 0, variance 1: what an Eval pass before any Train step normalizes with.
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }

    /// `r ← (1 − m)·r + m·b` for both moments.
    pub fn update(&mut self, batch_mean: &[T], batch_var: &[T], momentum: f64) -> Result<()> {
        let m = T::of(momentum);
        let keep = T::one() - m;
        let blend = |r: &Tensor<T>, b: &[T]| -> Result<Tensor<T>> {
            let v = r.data().iter().zip(b).map(|(&r, &b)| keep * r + m * b).collect();
            Ok(Tensor::from_vec(r.shape(), v)?)
        };
        self.mean = blend(&self.mean, batch_mean)?;
        self.var = blend(&self.var, batch_var)?;
        Ok(())
    }
}

fn check(
    x: &Tensor<impl Element>,
    gamma: &Tensor<impl Element>,
    beta: &Tensor<impl Element>,
    eps: f64,
) -> Result<usize> {
    if x.ndim() != 4 {
        return Err(shape_err(format!(
            "normalization expects NCHW input, got {:?}",
            x.shape()
        )));
    }
    let c = x.shape()[1];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err(format!(
            "normalization over {c} channels got gamma {:?}, beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    if !(eps > 0.0) {
        return Err(config_err(format!("normalization eps must be positive, got {eps}")));
    }
    Ok(c)
}

fn affine<T: Element>(y: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, c: usize) -> Result<Tensor<T>> {
    let g = reshape(gamma, &[1, c, 1, 1])?;
    let b = reshape(beta, &[1, c, 1, 1])?;
    Ok(add(&mul(y, &g)?, &b)?)
}

/// Standardizes `x` over `axes` with its own moments; returns the normalized
/// tensor (before the affine map) and the detached mean and biased variance.
fn standardize<T: Element>(x: &Tensor<T>, axes: &[usize], eps: f64) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let mean = mean_axes(x, axes, true)?;
    let centered = sub(x, &mean)?;
    let var = mean_axes(&square(&centered), axes, true)?;
    let y = div(&centered, &sqrt(&add_scalar(&var, T::of(eps))))?;
    Ok((y, mean.detach(), var.detach()))
}

/// Per-(sample, channel) standardization over H×W followed by a per-channel affine map.
pub fn instance_norm<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let c = check(x, gamma, beta, eps)?;
    let (y, _, _) = standardize(x, &[2, 3], eps)?;
    affine(&y, gamma, beta, c)
}

/// Train-mode batch norm: standardizes with the batch moments over N×H×W.
/// Returns the output and the per-channel batch mean and biased variance.
pub fn batch_norm_train<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let c = check(x, gamma, beta, eps)?;
    let (y, mean, var) = standardize(x, &[0, 2, 3], eps)?;
    Ok((affine(&y, gamma, beta, c)?, mean.to_vec(), var.to_vec()))
}

/// Eval-mode batch norm with fixed running moments.
pub fn batch_norm_eval<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let c = check(x, gamma, beta, eps)?;
    if stats.mean.shape() != [c] || stats.var.shape() != [c] {
        return Err(shape_err(format!("running stats do not cover {c} channels")));
    }
    let mean = reshape(&stats.mean, &[1, c, 1, 1])?;
    let std = sqrt(&add_scalar(&reshape(&stats.var, &[1, c, 1, 1])?, T::of(eps)));
    let y = div(&sub(x, &mean)?, &std)?;
    affine(&y, gamma, beta, c)
}

/// Batch norm in either mode; Train updates `stats` with `momentum`.
pub fn batch_norm<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: super::Mode,
    momentum: f64,
    eps: f64,
) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(config_err(format!("batch-norm momentum {momentum} outside [0, 1]")));
    }
    match mode {
        super::Mode::Train => {
            let (y, m, v) = batch_norm_train(x, gamma, beta, eps)?;
            stats.update(&m, &v, momentum)?;
            Ok(y)
        }
        super::Mode::Eval => batch_norm_eval(x, gamma, beta, stats, eps),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Mode;
    use elf_tensor::PrngState;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = PrngState::new(seed);
        let n = shape.iter().product();
        let v = (0..n).map(|_| rng.next_uniform() * 4.0 - 1.0).collect();
        Tensor::from_vec(shape, v).unwrap()
    }

    /// Mean and biased variance of every `(n, c)` plane, computed directly.
    fn plane_moments(x: &Tensor<f64>) -> Vec<(f64, f64)> {
        let [n, c, h, w] = x.shape().try_into().unwrap();
        (0..n * c)
            .map(|p| {
                let plane = &x.data()[p * h * w..(p + 1) * h * w];
                let m = plane.iter().sum::<f64>() / plane.len() as f64;
                let v = plane.iter().map(|a| (a - m).powi(2)).sum::<f64>() / plane.len() as f64;
                (m, v)
            })
            .collect()
    }

    #[test]
    fn instance_norm_moments() {
        let x = random(&[2, 3, 4, 4], 1);
        let y = instance_norm(&x, &Tensor::ones(&[3]), &Tensor::zeros(&[3]), 1e-5).unwrap();
        for (m, v) in plane_moments(&y) {
            assert!(m.abs() <= 1e-5, "mean {m}");
            assert!((v - 1.0).abs() <= 1e-3, "var {v}");
        }
    }

    #[test]
    fn instance_norm_degenerate_inputs() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 2, 2], vec![3.0, 3.0, 3.0, 3.0, -1.0, -1.0, -1.0, -1.0]).unwrap();
        let y = instance_norm(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let x = random(&[2, 2, 3, 3], 2);
        let beta = Tensor::<f64>::from_vec(&[2], vec![0.25, -4.0]).unwrap();
        let y = instance_norm(&x, &Tensor::zeros(&[2]), &beta, 1e-5).unwrap();
        for (i, &v) in y.data().iter().enumerate() {
            assert_eq!(v, beta.data()[(i / 9) % 2]);
        }

        assert!(instance_norm(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), 0.0).is_err());
        assert!(instance_norm(&x, &Tensor::ones(&[3]), &Tensor::zeros(&[3]), 1e-5).is_err());
    }

    #[test]
    fn batch_norm_train_moments_and_running_stats() {
        let x = random(&[4, 3, 3, 3], 3);
        let (y, mean, var) = batch_norm_train(&x, &Tensor::ones(&[3]), &Tensor::zeros(&[3]), 1e-5).unwrap();
        let planes = plane_moments(&y);
        for c in 0..3 {
            // per-channel moments pooled over the equally sized planes
            let m = (0..4).map(|n| planes[n * 3 + c].0).sum::<f64>() / 4.0;
            let v = (0..4)
                .map(|n| planes[n * 3 + c].1 + planes[n * 3 + c].0.powi(2))
                .sum::<f64>()
                / 4.0
                - m * m;
            assert!(m.abs() <= 1e-5);
            assert!((v - 1.0).abs() <= 1e-3);
        }

        let xp = plane_moments(&x);
        for c in 0..3 {
            let m: f64 = (0..4).map(|n| xp[n * 3 + c].0).sum::<f64>() / 4.0;
            assert!((mean[c] - m).abs() < 1e-12);
            let v = (0..4).map(|n| xp[n * 3 + c].1 + xp[n * 3 + c].0.powi(2)).sum::<f64>() / 4.0 - m * m;
            assert!((var[c] - v).abs() < 1e-12);
        }

        let mut stats = RunningStats::<f64>::new(3);
        batch_norm(
            &x,
            &Tensor::ones(&[3]),
            &Tensor::zeros(&[3]),
            &mut stats,
            Mode::Train,
            1.0,
            1e-5,
        )
        .unwrap();
        assert_eq!(stats.mean.to_vec(), mean);
        assert_eq!(stats.var.to_vec(), var);
    }

    #[test]
    fn batch_norm_eval_uses_running_stats() {
        let x = random(&[3, 2, 2, 2], 4);
        let (g, b) = (Tensor::<f64>::ones(&[2]), Tensor::<f64>::zeros(&[2]));
        let mut stats = RunningStats::new(2);
        // fresh stats: (x − 0)/√(1 + eps)
        let y0 = batch_norm(&x, &g, &b, &mut stats, Mode::Eval, 0.1, 1e-5).unwrap();
        let s = (1.0f64 + 1e-5).sqrt();
        for (a, e) in y0.data().iter().zip(x.data()) {
            assert!((a - e / s).abs() < 1e-12);
        }
        let before = stats.mean.to_vec();
        batch_norm(&x, &g, &b, &mut stats, Mode::Eval, 0.1, 1e-5).unwrap();
        assert_eq!(stats.mean.to_vec(), before);

        let yt = batch_norm(&x, &g, &b, &mut stats, Mode::Train, 0.1, 1e-5).unwrap();
        let one = Tensor::from_vec(&[1, 2, 2, 2], x.data()[..8].to_vec()).unwrap();
        let ye = batch_norm(&one, &g, &b, &mut stats, Mode::Eval, 0.1, 1e-5).unwrap();
        assert!(yt.data()[..8].iter().zip(ye.data()).any(|(a, b)| a != b));
    }
}
