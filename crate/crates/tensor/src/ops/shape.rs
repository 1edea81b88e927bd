use std::sync::{Arc, OnceLock};

use crate::autograd::Backward;
use crate::element::Element;
use crate::error::{arg_err, shape_err, Result};
use crate::ops::iter::{contiguous_strides, for_each_row};
use crate::tensor::{numel_of, Tensor};

struct ReshapeOp {
    in_shape: Vec<usize>,
}
impl<T: Element> Backward<T> for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(reshape(g, &self.in_shape)?)])
    }
}

/// Reinterprets the element buffer with a new shape (no copy).
pub fn reshape<T: Element>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if numel_of(shape) != x.numel() {
        return Err(shape_err(
            "reshape",
            format!("{:?} has {} elements, target {:?}", x.shape(), x.numel(), shape),
        ));
    }
    if shape == x.shape() {
        return Ok(x.clone());
    }
    Ok(Tensor::from_op_shared(
        shape.to_vec(),
        x.shared_data(),
        ReshapeOp {
            in_shape: x.shape().to_vec(),
        },
        &[x],
    ))
}

/// Collapses all axes after the first: `N×...` to `N×D`.
pub fn flatten<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let n = *x.shape().first().ok_or_else(|| arg_err("flatten", "rank-0 tensor"))?;
    let d = if n == 0 { 0 } else { x.numel() / n };
    reshape(x, &[n, d])
}

struct PermuteOp {
    inverse: Vec<usize>,
}
impl<T: Element> Backward<T> for PermuteOp {
    fn name(&self) -> &'static str {
        "permute"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(permute(g, &self.inverse)?)])
    }
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub fn permute<T: Element>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let rank = x.ndim();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(arg_err(
            "permute",
            format!("{perm:?} is not a permutation of rank {rank}"),
        ));
    }
    let in_strides = contiguous_strides(x.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let xd = x.data();
    let mut out = Vec::with_capacity(x.numel());
    let inner = src.last().copied().unwrap_or(1);
    for_each_row(&out_shape, [&src], |[o], len| {
        if inner == 1 {
            out.extend_from_slice(&xd[o..o + len]);
        } else {
            out.extend((0..len).map(|j| xd[o + j * inner]));
        }
    });
    let mut inverse = vec![0; rank];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    Ok(Tensor::from_op(out_shape, out, PermuteOp { inverse }, &[x]))
}

/// A sparse linear map `y = A·x` on flattened buffers, stored row-compressed.
///
/// Gathers, flips, translations, max-pool selections and bilinear resampling
/// are all instances; the transpose gives the adjoint for backward.
#[derive(Debug, Clone)]
pub struct SparseMap<T: Element> {
    out_len: usize,
    in_len: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Element> SparseMap<T> {
    /// Builds from per-output-row `(input index, weight)` lists.
    pub fn from_rows(in_len: usize, rows: impl IntoIterator<Item = Vec<(usize, T)>>) -> Result<Self> {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for row in rows {
            for (c, v) in row {
                if c >= in_len {
                    return Err(arg_err("sparse_map", format!("column {c} >= input length {in_len}")));
                }
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            out_len: row_ptr.len() - 1,
            in_len,
            row_ptr,
            cols,
            vals,
        })
    }

    /// One entry of weight 1 per output; `None` produces a zero.
    pub fn gather(in_len: usize, indices: &[Option<usize>]) -> Result<Self> {
        Self::from_rows(
            in_len,
            indices
                .iter()
                .map(|i| i.map(|c| vec![(c, T::one())]).unwrap_or_default()),
        )
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        (0..self.out_len)
            .map(|r| {
                let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
                let mut acc = T::zero();
                for k in s..e {
                    acc += self.vals[k] * x[self.cols[k]];
                }
                acc
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.in_len + 1];
        for &c in &self.cols {
            counts[c + 1] += 1;
        }
        for i in 0..self.in_len {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut cols = vec![0; self.cols.len()];
        let mut vals = vec![T::zero(); self.vals.len()];
        for r in 0..self.out_len {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[k];
                let slot = next[c];
                next[c] += 1;
                cols[slot] = r;
                vals[slot] = self.vals[k];
            }
        }
        Self {
            out_len: self.in_len,
            in_len: self.out_len,
            row_ptr,
            cols,
            vals,
        }
    }
}

struct SparseMapOp<T: Element> {
    map: Arc<SparseMap<T>>,
    adjoint: OnceLock<Arc<SparseMap<T>>>,
    in_shape: Vec<usize>,
}
impl<T: Element> Backward<T> for SparseMapOp<T> {
    fn name(&self) -> &'static str {
        "sparse_map"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let adj = self.adjoint.get_or_init(|| Arc::new(self.map.transpose())).clone();
        let back = OnceLock::new();
        let _ = back.set(Arc::clone(&self.map));
        Ok(vec![Some(apply_sparse(g, adj, back, &self.in_shape)?)])
    }
}

fn apply_sparse<T: Element>(
    x: &Tensor<T>,
    map: Arc<SparseMap<T>>,
    adjoint: OnceLock<Arc<SparseMap<T>>>,
    out_shape: &[usize],
) -> Result<Tensor<T>> {
    if map.in_len != x.numel() || map.out_len != numel_of(out_shape) {
        return Err(shape_err(
            "sparse_map",
            format!(
                "map {}→{} applied to {:?} with output {:?}",
                map.in_len,
                map.out_len,
                x.shape(),
                out_shape
            ),
        ));
    }
    let data = map.apply(x.data());
    let op = SparseMapOp {
        map,
        adjoint,
        in_shape: x.shape().to_vec(),
    };
    Ok(Tensor::from_op(out_shape.to_vec(), data, op, &[x]))
}

/// Applies a sparse linear map to the flattened `x`, reshaping to `out_shape`.
pub fn sparse_map<T: Element>(x: &Tensor<T>, map: Arc<SparseMap<T>>, out_shape: &[usize]) -> Result<Tensor<T>> {
    apply_sparse(x, map, OnceLock::new(), out_shape)
}

/// Selects rows (first-axis slices) by index; repeated indices are allowed.
pub fn index_select0<T: Element>(x: &Tensor<T>, indices: &[usize]) -> Result<Tensor<T>> {
    let n = *x
        .shape()
        .first()
        .ok_or_else(|| arg_err("index_select0", "rank-0 tensor"))?;
    let row = if n == 0 { 0 } else { x.numel() / n };
    let mut gather = Vec::with_capacity(indices.len() * row);
    for &i in indices {
        if i >= n {
            return Err(arg_err("index_select0", format!("index {i} out of range for {n} rows")));
        }
        gather.extend((0..row).map(|j| Some(i * row + j)));
    }
    let mut out_shape = x.shape().to_vec();
    out_shape[0] = indices.len();
    let map = SparseMap::gather(x.numel(), &gather)?;
    sparse_map(x, Arc::new(map), &out_shape)
}
