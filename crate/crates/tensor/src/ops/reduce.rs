use crate::autograd::Backward;
use crate::element::Element;
use crate::error::{arg_err, shape_err, Result};
use crate::ops::iter::{broadcast_strides, contiguous_strides, for_each_row};
use crate::ops::shape::reshape;
use crate::tensor::{numel_of, Tensor};

/// Target is broadcast-compatible with `shape` when aligned to the right.
fn check_reducible(op: &'static str, shape: &[usize], target: &[usize]) -> Result<()> {
    if target.len() > shape.len() {
        return Err(shape_err(op, format!("cannot reduce {shape:?} to {target:?}")));
    }
    let off = shape.len() - target.len();
    for (i, &t) in target.iter().enumerate() {
        let s = shape[i + off];
        if t != s && t != 1 {
            return Err(shape_err(op, format!("cannot reduce {shape:?} to {target:?}")));
        }
    }
    Ok(())
}

struct SumToOp {
    in_shape: Vec<usize>,
}
impl<T: Element> Backward<T> for SumToOp {
    fn name(&self) -> &'static str {
        "sum_to"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(broadcast_to(g, &self.in_shape)?)])
    }
}

/// Sums `x` down to `target`, the adjoint of [`broadcast_to`].
pub fn sum_to<T: Element>(x: &Tensor<T>, target: &[usize]) -> Result<Tensor<T>> {
    if x.shape() == target {
        return Ok(x.clone());
    }
    check_reducible("sum_to", x.shape(), target)?;
    let shape = x.shape();
    // strides of the output read in x's index space
    let out_strides = broadcast_strides(target, shape);
    let in_strides = contiguous_strides(shape);
    let mut out = vec![T::zero(); numel_of(target)];
    let xd = x.data();
    let inner = match shape.len() {
        0 => 0,
        n => out_strides[n - 1],
    };
    for_each_row(shape, [&in_strides, &out_strides], |[ix, io], len| {
        let row = &xd[ix..ix + len];
        if inner == 0 {
            let mut acc = T::zero();
            for &v in row {
                acc += v;
            }
            out[io] += acc;
        } else {
            for (o, &v) in out[io..io + len].iter_mut().zip(row) {
                *o += v;
            }
        }
    });
    Ok(Tensor::from_op(
        target.to_vec(),
        out,
        SumToOp {
            in_shape: shape.to_vec(),
        },
        &[x],
    ))
}

struct BroadcastToOp {
    in_shape: Vec<usize>,
}
impl<T: Element> Backward<T> for BroadcastToOp {
    fn name(&self) -> &'static str {
        "broadcast_to"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(sum_to(g, &self.in_shape)?)])
    }
}

pub fn broadcast_to<T: Element>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if x.shape() == shape {
        return Ok(x.clone());
    }
    check_reducible("broadcast_to", shape, x.shape())?;
    let src = broadcast_strides(x.shape(), shape);
    let dst = contiguous_strides(shape);
    let xd = x.data();
    let mut out = Vec::with_capacity(numel_of(shape));
    let inner = match shape.len() {
        0 => 0,
        n => src[n - 1],
    };
    for_each_row(shape, [&src, &dst], |[is, _], len| {
        if inner == 0 {
            out.extend(std::iter::repeat_n(xd[is], len));
        } else {
            out.extend_from_slice(&xd[is..is + len]);
        }
    });
    Ok(Tensor::from_op(
        shape.to_vec(),
        out,
        BroadcastToOp {
            in_shape: x.shape().to_vec(),
        },
        &[x],
    ))
}

/// Sum of all elements as a rank-0 tensor.
pub fn sum_all<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    sum_to(x, &[]).expect("every shape reduces to a scalar")
}

pub fn mean_all<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.numel().max(1);
    crate::ops::scale(&sum_all(x), T::of(1.0 / n as f64))
}

fn reduced_shape(op: &'static str, shape: &[usize], axes: &[usize]) -> Result<Vec<usize>> {
    let mut target = shape.to_vec();
    for &a in axes {
        if a >= shape.len() {
            return Err(arg_err(op, format!("axis {a} out of range for rank {}", shape.len())));
        }
        target[a] = 1;
    }
    Ok(target)
}

pub fn sum_axes<T: Element>(x: &Tensor<T>, axes: &[usize], keepdim: bool) -> Result<Tensor<T>> {
    let target = reduced_shape("sum_axes", x.shape(), axes)?;
    let y = sum_to(x, &target)?;
    if keepdim {
        Ok(y)
    } else {
        let squeezed: Vec<usize> = x
            .shape()
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect();
        reshape(&y, &squeezed)
    }
}

pub fn mean_axes<T: Element>(x: &Tensor<T>, axes: &[usize], keepdim: bool) -> Result<Tensor<T>> {
    let count: usize = axes.iter().map(|&a| x.shape().get(a).copied().unwrap_or(1)).product();
    let s = sum_axes(x, axes, keepdim)?;
    Ok(crate::ops::scale(&s, T::of(1.0 / count.max(1) as f64)))
}

/// Maximum along the last axis, keepdim, as a constant (no gradient).
pub fn max_last_axis_detached<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = x.shape();
    let Some(&k) = shape.last() else {
        return Ok(x.detach());
    };
    if k == 0 {
        return Err(arg_err("max", "empty axis"));
    }
    let data: Vec<T> = x
        .data()
        .chunks(k)
        .map(|row| row.iter().copied().fold(T::neg_infinity(), T::max))
        .collect();
    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().unwrap() = 1;
    Tensor::from_vec(&out_shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_axes_keepdim_and_squeeze() {
        let x = Tensor::<f64>::from_f64s(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s0 = sum_axes(&x, &[0], false).unwrap();
        assert_eq!(s0.shape(), &[3]);
        assert_eq!(s0.to_vec(), vec![5.0, 7.0, 9.0]);
        let s1 = sum_axes(&x, &[1], true).unwrap();
        assert_eq!(s1.shape(), &[2, 1]);
        assert_eq!(s1.to_vec(), vec![6.0, 15.0]);
        assert_eq!(sum_all(&x).item(), 21.0);
    }

    #[test]
    fn broadcast_then_sum_is_count_scaling() {
        let x = Tensor::<f64>::from_f64s(&[1, 3, 1], &[1.0, 2.0, 3.0]).unwrap();
        let b = broadcast_to(&x, &[2, 3, 4]).unwrap();
        let s = sum_to(&b, &[1, 3, 1]).unwrap();
        assert_eq!(s.to_vec(), vec![8.0, 16.0, 24.0]);
    }

    #[test]
    fn max_is_rowwise() {
        let x = Tensor::<f32>::from_slice(&[2, 2], &[1.0, -3.0, -1.0, 0.5]).unwrap();
        assert_eq!(max_last_axis_detached(&x).unwrap().to_vec(), vec![1.0, 0.5]);
    }
}
