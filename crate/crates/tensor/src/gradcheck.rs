//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used for the numeric side, so the check is
//! independent of the backward rules it verifies.

use crate::autograd::grad;
use crate::error::Result;
use crate::ops::*;
use crate::prng::PrngState;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Per input: `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, floor)`.
    pub relative_errors: Vec<f64>,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares autodiff gradients of the scalar `f(inputs)` against central
/// differences with step `eps`.
pub fn check_gradients<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach().requires_grad()).collect();
    let out = f(&leaves)?;
    let refs: Vec<&Tensor<f64>> = leaves.iter().collect();
    let analytic: Vec<Vec<f64>> = grad(&out, &refs, false)?.iter().map(|g| g.to_vec()).collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let base = inputs[k].to_vec();
        let mut col = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut v = base.clone();
                v[i] += delta;
                let mut args: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach()).collect();
                args[k] = Tensor::from_vec(inputs[k].shape(), v)?;
                // detached inputs build no graph unless `f` creates its own leaves
                f(&args).map(|t| t.item())
            };
            col.push((eval(eps)? - eval(-eps)?) / (2.0 * eps));
        }
        numeric.push(col);
    }

    let relative_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
            diff / na.max(nn).max(1e-10)
        })
        .collect();
    Ok(GradCheckReport {
        relative_errors,
        analytic,
        numeric,
    })
}

/// Inputs of one randomized check and the scalar function of them.
pub struct GradCase {
    pub inputs: Vec<Tensor<f64>>,
    pub f: Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>,
}

/// Worst result of one op over its random shapes.
#[derive(Debug, Clone)]
pub struct BatteryReport {
    pub name: String,
    pub cases: usize,
    pub max_relative_error: f64,
    pub worst_shapes: Vec<Vec<usize>>,
}

/// Checks `cases` random instances drawn by `case` from a stream seeded
/// with `seed`.
pub fn run_battery<C>(name: &str, seed: u64, cases: usize, eps: f64, mut case: C) -> Result<BatteryReport>
where
    C: FnMut(&mut PrngState) -> GradCase,
{
    let mut rng = PrngState::new(seed);
    let mut report = BatteryReport {
        name: name.to_string(),
        cases,
        max_relative_error: 0.0,
        worst_shapes: Vec::new(),
    };
    for _ in 0..cases {
        let c = case(&mut rng);
        let err = check_gradients(&c.f, &c.inputs, eps)?.max_relative_error();
        if err >= report.max_relative_error {
            report.max_relative_error = err;
            report.worst_shapes = c.inputs.iter().map(|t| t.shape().to_vec()).collect();
        }
    }
    Ok(report)
}

/// Uniform values in `[-1, 1)`.
pub fn rand_tensor(shape: &[usize], rng: &mut PrngState) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.next_uniform() * 2.0 - 1.0).collect();
    Tensor::from_vec(shape, v).expect("length matches shape")
}

fn dim(rng: &mut PrngState, lo: usize, hi: usize) -> usize {
    lo + rng.next_below(hi - lo + 1)
}

/// Scalar `Σ y ⊙ w` for a fixed random `w`, so every output position
/// contributes with a distinct weight.
pub fn project(y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = PrngState::new(seed);
    let w = rand_tensor(y.shape(), &mut rng);
    Ok(sum_all(&mul(y, &w)?))
}

type CaseFn = fn(&mut PrngState) -> GradCase;

fn case(inputs: Vec<Tensor<f64>>, f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'static) -> GradCase {
    GradCase { inputs, f: Box::new(f) }
}

/// Every differentiable op of the crate with its random-shape generator
/// and stream seed.
pub fn standard_batteries() -> Vec<(&'static str, u64, CaseFn)> {
    vec![
        ("conv2d", 1, |rng| {
            let (n, c, o) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3));
            let k = dim(rng, 1, 3);
            let stride = dim(rng, 1, 2);
            let pad = dim(rng, 0, 1);
            let h = dim(rng, k.max(2), 6);
            let w = dim(rng, k.max(2), 6);
            let bias = rng.next_below(2) == 0;
            let mut inputs = vec![rand_tensor(&[n, c, h, w], rng), rand_tensor(&[o, c, k, k], rng)];
            if bias {
                inputs.push(rand_tensor(&[o], rng));
            }
            let seed = rng.next_u64();
            case(inputs, move |xs| {
                project(&conv2d(&xs[0], &xs[1], xs.get(2), stride, pad)?, seed)
            })
        }),
        ("linear", 2, |rng| {
            let (n, d, k) = (dim(rng, 1, 5), dim(rng, 1, 6), dim(rng, 1, 5));
            let inputs = vec![
                rand_tensor(&[n, d], rng),
                rand_tensor(&[d, k], rng),
                rand_tensor(&[k], rng),
            ];
            let seed = rng.next_u64();
            case(inputs, move |xs| project(&linear(&xs[0], &xs[1], &xs[2])?, seed))
        }),
        ("avg_pool2d", 3, |rng| {
            let k = dim(rng, 1, 3);
            let shape = [dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, k, 7), dim(rng, k, 7)];
            let stride = dim(rng, 1, k);
            let seed = rng.next_u64();
            case(vec![rand_tensor(&shape, rng)], move |xs| {
                project(&avg_pool2d(&xs[0], k, stride)?, seed)
            })
        }),
        ("max_pool2d", 4, |rng| {
            let k = dim(rng, 1, 3);
            let shape = [dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, k, 7), dim(rng, k, 7)];
            let stride = dim(rng, 1, k);
            let seed = rng.next_u64();
            case(vec![rand_tensor(&shape, rng)], move |xs| {
                project(&max_pool2d(&xs[0], k, stride)?, seed)
            })
        }),
        ("global_avg_pool", 5, |rng| {
            let shape = [dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 5), dim(rng, 1, 5)];
            let seed = rng.next_u64();
            case(vec![rand_tensor(&shape, rng)], move |xs| {
                project(&global_avg_pool(&xs[0])?, seed)
            })
        }),
        ("softmax_cross_entropy", 6, |rng| {
            let (n, k) = (dim(rng, 1, 6), dim(rng, 2, 7));
            let labels: Vec<usize> = (0..n).map(|_| rng.next_below(k)).collect();
            case(vec![rand_tensor(&[n, k], rng).scale(3.0)], move |xs| {
                softmax_cross_entropy(&xs[0], &labels)
            })
        }),
        ("log_softmax", 7, |rng| {
            let (n, k) = (dim(rng, 1, 4), dim(rng, 1, 6));
            let seed = rng.next_u64();
            case(vec![rand_tensor(&[n, k], rng)], move |xs| {
                project(&log_softmax(&xs[0])?, seed)
            })
        }),
        ("broadcast arithmetic", 8, |rng| {
            let shape = [dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 3)];
            // second operand broadcasts along a random subset of axes
            let bshape: Vec<usize> = shape
                .iter()
                .map(|&d| if rng.next_below(2) == 0 { 1 } else { d })
                .collect();
            let a = rand_tensor(&shape, rng);
            let b = add_scalar(&abs(&rand_tensor(&bshape, rng)), 0.5);
            let seed = rng.next_u64();
            case(vec![a, b], move |xs| {
                let s = add(&xs[0], &xs[1])?;
                let d = sub(&mul(&s, &xs[0])?, &div(&xs[0], &xs[1])?)?;
                project(&d, seed)
            })
        }),
        ("unary", 9, |rng| {
            let shape = [dim(rng, 1, 4), dim(rng, 1, 5)];
            let seed = rng.next_u64();
            case(vec![rand_tensor(&shape, rng)], move |xs| {
                let x = &xs[0];
                let pos = add_scalar(&square(x), 0.25);
                let y = add(&add(&exp(x), &log(&pos))?, &sqrt(&pos))?;
                let y = add(&add(&y, &relu(x))?, &abs(&neg(x)))?;
                project(&scale(&y, 0.7), seed)
            })
        }),
        ("reductions", 10, |rng| {
            let shape = [dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 3)];
            let axis = rng.next_below(3);
            let keep = rng.next_below(2) == 0;
            let seed = rng.next_u64();
            case(vec![rand_tensor(&shape, rng)], move |xs| {
                let s = sum_axes(&xs[0], &[axis], keep)?;
                let m = mean_axes(&xs[0], &[0, 2], true)?;
                let total = add(&project(&s, seed)?, &project(&m, seed ^ 1)?)?;
                add(&total, &mean_all(&square(&xs[0])))
            })
        }),
        ("shape ops", 11, |rng| {
            let shape = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3)];
            let seed = rng.next_u64();
            case(vec![rand_tensor(&shape, rng)], move |xs| {
                let p = permute(&xs[0], &[2, 0, 1])?;
                let sel = index_select0(&p, &[0, 0])?;
                project(&flatten(&sel)?, seed)
            })
        }),
        ("matmul", 14, |rng| {
            let (m, k, n) = (dim(rng, 1, 4), dim(rng, 1, 5), dim(rng, 1, 4));
            let (ta, tb) = (rng.next_below(2) == 0, rng.next_below(2) == 0);
            let a = rand_tensor(&if ta { [k, m] } else { [m, k] }, rng);
            let b = rand_tensor(&if tb { [n, k] } else { [k, n] }, rng);
            let seed = rng.next_u64();
            case(vec![a, b], move |xs| {
                let t = |x: &Tensor<f64>, on: bool| if on { permute(x, &[1, 0]) } else { Ok(x.clone()) };
                let y = matmul_t(&xs[0], ta, &xs[1], tb)?;
                let z = matmul(&t(&xs[0], ta)?, &t(&xs[1], tb)?)?;
                add(&project(&y, seed)?, &project(&z, seed ^ 1)?)
            })
        }),
        ("broadcast and reshape", 15, |rng| {
            let shape = [dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 3)];
            let small: Vec<usize> = shape
                .iter()
                .map(|&d| if rng.next_below(2) == 0 { 1 } else { d })
                .collect();
            let seed = rng.next_u64();
            case(vec![rand_tensor(&small, rng), rand_tensor(&shape, rng)], move |xs| {
                let b = broadcast_to(&xs[0], &shape)?;
                let folded = sum_to(&mul(&b, &xs[1])?, &small)?;
                let flat = reshape(&xs[1], &[shape.iter().product()])?;
                add(
                    &project(&folded, seed)?,
                    &add(&project(&flat, seed ^ 1)?, &mean_square(&b))?,
                )
            })
        }),
        ("sparse_map", 16, |rng| {
            let (inp, out) = (dim(rng, 1, 8), dim(rng, 1, 8));
            let rows: Vec<Vec<(usize, f64)>> = (0..out)
                .map(|_| {
                    (0..dim(rng, 0, 3))
                        .map(|_| (rng.next_below(inp), rng.next_uniform() - 0.5))
                        .collect()
                })
                .collect();
            let map = std::sync::Arc::new(SparseMap::from_rows(inp, rows).expect("columns in range"));
            let seed = rng.next_u64();
            case(vec![rand_tensor(&[inp], rng)], move |xs| {
                project(&sparse_map(&xs[0], map.clone(), &[out])?, seed)
            })
        }),
        ("cosine_distance", 12, |rng| {
            let n = dim(rng, 2, 8);
            case(vec![rand_tensor(&[n], rng), rand_tensor(&[n], rng)], |xs| {
                cosine_distance(&xs[0], &xs[1])
            })
        }),
        ("soft_cross_entropy", 13, |rng| {
            let (n, k) = (dim(rng, 1, 4), dim(rng, 2, 6));
            let target = softmax_detached(&rand_tensor(&[n, k], rng)).expect("2-D input");
            case(vec![rand_tensor(&[n, k], rng)], move |xs| {
                soft_cross_entropy(&xs[0], &target)
            })
        }),
    ]
}
