use crate::autograd::Backward;
use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::ops::iter::{broadcast_shapes, broadcast_strides, for_each_row};
use crate::ops::reduce::sum_to;
use crate::tensor::{numel_of, Tensor};

fn binary_data<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<(Vec<usize>, Vec<T>)> {
    let (ad, bd) = (a.data(), b.data());
    if a.shape() == b.shape() {
        let data = ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect();
        return Ok((a.shape().to_vec(), data));
    }
    let out_shape = broadcast_shapes(a.shape(), b.shape())
        .ok_or_else(|| shape_err(op, format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape())))?;
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let (ia, ib) = match out_shape.len() {
        0 => (0, 0),
        n => (sa[n - 1], sb[n - 1]),
    };
    let mut out = Vec::with_capacity(numel_of(&out_shape));
    for_each_row(&out_shape, [&sa, &sb], |[oa, ob], len| match (ia, ib) {
        (1, 1) => out.extend(ad[oa..oa + len].iter().zip(&bd[ob..ob + len]).map(|(&x, &y)| f(x, y))),
        (1, 0) => {
            let y = bd[ob];
            out.extend(ad[oa..oa + len].iter().map(|&x| f(x, y)));
        }
        (0, 1) => {
            let x = ad[oa];
            out.extend(bd[ob..ob + len].iter().map(|&y| f(x, y)));
        }
        _ => {
            for j in 0..len {
                out.push(f(ad[oa + j * ia], bd[ob + j * ib]));
            }
        }
    });
    Ok((out_shape, out))
}

fn reduce_for<T: Element>(input: &Tensor<T>, g: impl FnOnce() -> Result<Tensor<T>>) -> Result<Option<Tensor<T>>> {
    if !input.requires_grad_flag() {
        return Ok(None);
    }
    Ok(Some(sum_to(&g()?, input.shape())?))
}

struct AddOp;
impl<T: Element> Backward<T> for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![
            reduce_for(&inputs[0], || Ok(g.clone()))?,
            reduce_for(&inputs[1], || Ok(g.clone()))?,
        ])
    }
}

struct SubOp;
impl<T: Element> Backward<T> for SubOp {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![
            reduce_for(&inputs[0], || Ok(g.clone()))?,
            reduce_for(&inputs[1], || Ok(neg(g)))?,
        ])
    }
}

struct MulOp;
impl<T: Element> Backward<T> for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        Ok(vec![reduce_for(a, || mul(g, b))?, reduce_for(b, || mul(g, a))?])
    }
}

struct DivOp;
impl<T: Element> Backward<T> for DivOp {
    fn name(&self) -> &'static str {
        "div"
    }
    fn backward(&self, inputs: &[Tensor<T>], out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        Ok(vec![
            reduce_for(a, || div(g, b))?,
            reduce_for(b, || Ok(neg(&div(&mul(g, out)?, b)?)))?,
        ])
    }
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (shape, data) = binary_data("add", a, b, |x, y| x + y)?;
    Ok(Tensor::from_op(shape, data, AddOp, &[a, b]))
}

pub fn sub<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (shape, data) = binary_data("sub", a, b, |x, y| x - y)?;
    Ok(Tensor::from_op(shape, data, SubOp, &[a, b]))
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (shape, data) = binary_data("mul", a, b, |x, y| x * y)?;
    Ok(Tensor::from_op(shape, data, MulOp, &[a, b]))
}

pub fn div<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (shape, data) = binary_data("div", a, b, |x, y| x / y)?;
    Ok(Tensor::from_op(shape, data, DivOp, &[a, b]))
}

struct ScaleOp<T>(T);
impl<T: Element> Backward<T> for ScaleOp<T> {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(scale(g, self.0))])
    }
}

pub fn scale<T: Element>(x: &Tensor<T>, c: T) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v * c).collect();
    Tensor::from_op(x.shape().to_vec(), data, ScaleOp(c), &[x])
}

pub fn neg<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    scale(x, -T::one())
}

struct AddScalarOp;
impl<T: Element> Backward<T> for AddScalarOp {
    fn name(&self) -> &'static str {
        "add_scalar"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(g.clone())])
    }
}

pub fn add_scalar<T: Element>(x: &Tensor<T>, c: T) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v + c).collect();
    Tensor::from_op(x.shape().to_vec(), data, AddScalarOp, &[x])
}

struct ExpOp;
impl<T: Element> Backward<T> for ExpOp {
    fn name(&self) -> &'static str {
        "exp"
    }
    fn backward(&self, _: &[Tensor<T>], out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(mul(g, out)?)])
    }
}

pub fn exp<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|v| v.exp()).collect();
    Tensor::from_op(x.shape().to_vec(), data, ExpOp, &[x])
}

struct LogOp;
impl<T: Element> Backward<T> for LogOp {
    fn name(&self) -> &'static str {
        "log"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(div(g, &inputs[0])?)])
    }
}

pub fn log<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|v| v.ln()).collect();
    Tensor::from_op(x.shape().to_vec(), data, LogOp, &[x])
}

struct SqrtOp;
impl<T: Element> Backward<T> for SqrtOp {
    fn name(&self) -> &'static str {
        "sqrt"
    }
    fn backward(&self, _: &[Tensor<T>], out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(div(&scale(g, T::of(0.5)), out)?)])
    }
}

pub fn sqrt<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|v| v.sqrt()).collect();
    Tensor::from_op(x.shape().to_vec(), data, SqrtOp, &[x])
}

struct SquareOp;
impl<T: Element> Backward<T> for SquareOp {
    fn name(&self) -> &'static str {
        "square"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(scale(&mul(g, &inputs[0])?, T::of(2.0)))])
    }
}

pub fn square<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v * v).collect();
    Tensor::from_op(x.shape().to_vec(), data, SquareOp, &[x])
}

/// Multiplies the incoming gradient by a constant mask derived from the input.
struct MaskedOp {
    name: &'static str,
    mask_fn: fn(f64) -> f64,
}
impl<T: Element> Backward<T> for MaskedOp {
    fn name(&self) -> &'static str {
        self.name
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let f = self.mask_fn;
        let mask: Vec<T> = inputs[0].data().iter().map(|v| T::of(f(v.as_f64()))).collect();
        let mask = Tensor::from_vec(inputs[0].shape(), mask)?;
        Ok(vec![Some(mul(g, &mask)?)])
    }
}

/// `max(0, x)`; the subgradient at 0 is 0. NaN passes through so that
/// divergence stays visible downstream.
pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .map(|&v| if v > T::zero() || v.is_nan() { v } else { T::zero() })
        .collect();
    let op = MaskedOp {
        name: "relu",
        mask_fn: |v| if v > 0.0 { 1.0 } else { 0.0 },
    };
    Tensor::from_op(x.shape().to_vec(), data, op, &[x])
}

/// `|x|`; the subgradient at 0 is 0.
pub fn abs<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|v| v.abs()).collect();
    let op = MaskedOp {
        name: "abs",
        mask_fn: |v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        },
    };
    Tensor::from_op(x.shape().to_vec(), data, op, &[x])
}
