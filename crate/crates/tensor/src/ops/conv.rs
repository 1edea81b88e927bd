//! Convolution and pooling over NCHW tensors.
//!
//! `conv2d` lowers to `im2col` followed by a single GEMM. `im2col`/`col2im`
//! and `avg_pool2d`/its spread are adjoint pairs, each the other's backward,
//! so gradients of gradients come for free.

use std::sync::Arc;

use crate::autograd::Backward;
use crate::element::Element;
use crate::error::{shape_err, Result, TensorError};
use crate::ops::{add, matmul, permute, reshape, sparse_map, SparseMap};
use crate::tensor::Tensor;

/// Output length of a strided window sweep, or `None` when it would be < 1.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn nchw(op: &'static str, x: &Tensor<impl Element>) -> Result<[usize; 4]> {
    match x.shape() {
        &[n, c, h, w] => Ok([n, c, h, w]),
        s => Err(shape_err(op, format!("expected NCHW input, got {s:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ColGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ColGeometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.n * self.oh * self.ow
    }

    /// Calls `f(col_start, input_start, len)` for every run of in-bounds taps
    /// of row `(c, i, j)`. Within a run, columns advance by 1 and input
    /// positions by `stride`.
    #[inline]
    fn for_runs(&self, c: usize, i: usize, j: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow, s, p) = (self.oh, self.ow, self.stride, self.pad);
        // x is valid iff 0 ≤ x·s + j − p < w
        let x_lo = if p > j { (p - j).div_ceil(s) } else { 0 };
        let x_hi = if self.w + p > j {
            ((self.w + p - j - 1) / s + 1).min(ow)
        } else {
            0
        };
        if x_lo >= x_hi {
            return;
        }
        let len = x_hi - x_lo;
        for n in 0..self.n {
            let plane = (n * self.c + c) * self.h * self.w;
            for y in 0..oh {
                let ih = (y * s + i) as isize - p as isize;
                if ih < 0 || ih as usize >= self.h {
                    continue;
                }
                let src = plane + ih as usize * self.w + x_lo * s + j - p;
                f((n * oh + y) * ow + x_lo, src, len);
            }
        }
    }

    fn im2col<T: Element>(&self, x: &[T]) -> Vec<T> {
        let cols = self.cols();
        let s = self.stride;
        let mut out = vec![T::zero(); self.rows() * cols];
        for c in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let r = (c * self.kh + i) * self.kw + j;
                    let dst = &mut out[r * cols..(r + 1) * cols];
                    self.for_runs(c, i, j, |col, src, len| {
                        if s == 1 {
                            dst[col..col + len].copy_from_slice(&x[src..src + len]);
                        } else {
                            for (d, v) in dst[col..col + len].iter_mut().zip(x[src..].iter().step_by(s)) {
                                *d = *v;
                            }
                        }
                    });
                }
            }
        }
        out
    }

    fn col2im<T: Element>(&self, cols_data: &[T]) -> Vec<T> {
        let cols = self.cols();
        let s = self.stride;
        let mut out = vec![T::zero(); self.n * self.c * self.h * self.w];
        for c in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let r = (c * self.kh + i) * self.kw + j;
                    let src = &cols_data[r * cols..(r + 1) * cols];
                    self.for_runs(c, i, j, |col, dst, len| {
                        let from = &src[col..col + len];
                        if s == 1 {
                            for (d, v) in out[dst..dst + len].iter_mut().zip(from) {
                                *d += *v;
                            }
                        } else {
                            for (d, v) in out[dst..].iter_mut().step_by(s).zip(from) {
                                *d += *v;
                            }
                        }
                    });
                }
            }
        }
        out
    }
}

struct Im2ColOp(ColGeometry);
impl<T: Element> Backward<T> for Im2ColOp {
    fn name(&self) -> &'static str {
        "im2col"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(col2im(g, self.0))])
    }
}

struct Col2ImOp(ColGeometry);
impl<T: Element> Backward<T> for Col2ImOp {
    fn name(&self) -> &'static str {
        "col2im"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(im2col(g, self.0))])
    }
}

fn im2col<T: Element>(x: &Tensor<T>, geo: ColGeometry) -> Tensor<T> {
    let data = geo.im2col(x.data());
    Tensor::from_op(vec![geo.rows(), geo.cols()], data, Im2ColOp(geo), &[x])
}

fn col2im<T: Element>(cols: &Tensor<T>, geo: ColGeometry) -> Tensor<T> {
    let data = geo.col2im(cols.data());
    Tensor::from_op(vec![geo.n, geo.c, geo.h, geo.w], data, Col2ImOp(geo), &[cols])
}

/// Cross-correlation of `input: N×C×H×W` with `kernel: O×C×kH×kW`.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = nchw("conv2d", input)?;
    let [o, kc, kh, kw] = match kernel.shape() {
        &[o, kc, kh, kw] => [o, kc, kh, kw],
        s => return Err(shape_err("conv2d", format!("expected OIHW kernel, got {s:?}"))),
    };
    if kc != c {
        return Err(shape_err(
            "conv2d",
            format!(
                "input channels (axis 1 of input {:?}) = {c} but kernel in-channels (axis 1 of kernel {:?}) = {kc}",
                input.shape(),
                kernel.shape()
            ),
        ));
    }
    let oh = conv_output_len(h, kh, stride, pad);
    let ow = conv_output_len(w, kw, stride, pad);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return Err(TensorError::NonPositiveOutput {
            op: "conv2d",
            detail: format!("input {h}×{w}, kernel {kh}×{kw}, stride {stride}, pad {pad}"),
        });
    };
    let geo = ColGeometry {
        n,
        c,
        h,
        w,
        kh,
        kw,
        stride,
        pad,
        oh,
        ow,
    };
    let cols = im2col(input, geo);
    let wmat = reshape(kernel, &[o, geo.rows()])?;
    let y = matmul(&wmat, &cols)?; // O × (N·OH·OW)
    let y = reshape(&y, &[o, n, oh, ow])?;
    let y = permute(&y, &[1, 0, 2, 3])?;
    match bias {
        None => Ok(y),
        Some(b) => {
            if b.shape() != [o] {
                return Err(shape_err(
                    "conv2d",
                    format!("bias {:?} for {o} output channels", b.shape()),
                ));
            }
            add(&y, &reshape(b, &[1, o, 1, 1])?)
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PoolGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl PoolGeometry {
    fn new(op: &'static str, x: &Tensor<impl Element>, k: usize, stride: usize) -> Result<Self> {
        let [n, c, h, w] = nchw(op, x)?;
        match (conv_output_len(h, k, stride, 0), conv_output_len(w, k, stride, 0)) {
            (Some(oh), Some(ow)) => Ok(Self {
                n,
                c,
                h,
                w,
                k,
                stride,
                oh,
                ow,
            }),
            _ => Err(TensorError::NonPositiveOutput {
                op,
                detail: format!("window {k} (stride {stride}) does not fit {h}×{w}"),
            }),
        }
    }

    fn pool<T: Element>(&self, x: &[T]) -> Vec<T> {
        let inv = T::of(1.0 / (self.k * self.k) as f64);
        let mut out = Vec::with_capacity(self.n * self.c * self.oh * self.ow);
        for p in 0..self.n * self.c {
            let plane = &x[p * self.h * self.w..(p + 1) * self.h * self.w];
            for y in 0..self.oh {
                for xo in 0..self.ow {
                    let mut acc = T::zero();
                    for i in 0..self.k {
                        let row = (y * self.stride + i) * self.w + xo * self.stride;
                        for &v in &plane[row..row + self.k] {
                            acc += v;
                        }
                    }
                    out.push(acc * inv);
                }
            }
        }
        out
    }

    fn spread<T: Element>(&self, g: &[T]) -> Vec<T> {
        let inv = T::of(1.0 / (self.k * self.k) as f64);
        let mut out = vec![T::zero(); self.n * self.c * self.h * self.w];
        for p in 0..self.n * self.c {
            let plane = &mut out[p * self.h * self.w..(p + 1) * self.h * self.w];
            let gp = &g[p * self.oh * self.ow..(p + 1) * self.oh * self.ow];
            for y in 0..self.oh {
                for xo in 0..self.ow {
                    let v = gp[y * self.ow + xo] * inv;
                    for i in 0..self.k {
                        let row = (y * self.stride + i) * self.w + xo * self.stride;
                        for o in &mut plane[row..row + self.k] {
                            *o += v;
                        }
                    }
                }
            }
        }
        out
    }
}

struct AvgPoolOp(PoolGeometry);
impl<T: Element> Backward<T> for AvgPoolOp {
    fn name(&self) -> &'static str {
        "avg_pool2d"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(avg_pool_spread(g, self.0))])
    }
}

struct AvgPoolSpreadOp(PoolGeometry);
impl<T: Element> Backward<T> for AvgPoolSpreadOp {
    fn name(&self) -> &'static str {
        "avg_pool2d_adjoint"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let geo = self.0;
        let data = geo.pool(g.data());
        Ok(vec![Some(Tensor::from_op(
            vec![geo.n, geo.c, geo.oh, geo.ow],
            data,
            AvgPoolOp(geo),
            &[g],
        ))])
    }
}

fn avg_pool_spread<T: Element>(g: &Tensor<T>, geo: PoolGeometry) -> Tensor<T> {
    let data = geo.spread(g.data());
    Tensor::from_op(vec![geo.n, geo.c, geo.h, geo.w], data, AvgPoolSpreadOp(geo), &[g])
}

/// Mean over each `k×k` window.
pub fn avg_pool2d<T: Element>(input: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    let geo = PoolGeometry::new("avg_pool2d", input, k, stride)?;
    let data = geo.pool(input.data());
    Ok(Tensor::from_op(
        vec![geo.n, geo.c, geo.oh, geo.ow],
        data,
        AvgPoolOp(geo),
        &[input],
    ))
}

/// Maximum over each `k×k` window; ties resolve to the first position in
/// row-major window order. The gradient routes to the selected element.
pub fn max_pool2d<T: Element>(input: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    let geo = PoolGeometry::new("max_pool2d", input, k, stride)?;
    let x = input.data();
    let mut picks = Vec::with_capacity(geo.n * geo.c * geo.oh * geo.ow);
    for p in 0..geo.n * geo.c {
        let base = p * geo.h * geo.w;
        for y in 0..geo.oh {
            for xo in 0..geo.ow {
                let mut best = base + y * stride * geo.w + xo * stride;
                for i in 0..k {
                    for j in 0..k {
                        let idx = base + (y * stride + i) * geo.w + xo * stride + j;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                picks.push(Some(best));
            }
        }
    }
    let map = SparseMap::gather(input.numel(), &picks)?;
    sparse_map(input, Arc::new(map), &[geo.n, geo.c, geo.oh, geo.ow])
}

/// Mean over the spatial axes: `N×C×H×W` to `N×C`.
pub fn global_avg_pool<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, _, _] = nchw("global_avg_pool", input)?;
    let m = crate::ops::mean_axes(input, &[2, 3], true)?;
    reshape(&m, &[n, c])
}
