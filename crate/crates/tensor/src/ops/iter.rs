//! Strided row iteration shared by broadcasting, reductions and permutes.

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (s, &d) in strides.iter_mut().zip(shape).rev() {
        *s = acc;
        acc *= d;
    }
    strides
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides for reading `src` as if broadcast to `out` (0 along broadcast axes).
pub(crate) fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let base = contiguous_strides(src);
    let off = out.len() - src.len();
    (0..out.len())
        .map(|i| {
            if i < off {
                0
            } else {
                let d = src[i - off];
                if d == 1 && out[i] != 1 {
                    0
                } else {
                    base[i - off]
                }
            }
        })
        .collect()
}

/// Walks `shape` row by row (the last axis is the row). For every row calls
/// `f(offsets, row_len)` where `offsets[k]` is the start offset of the row in
/// operand `k` given that operand's `strides`. Rank-0 shapes yield one row of
/// length 1.
pub(crate) fn for_each_row<const K: usize>(
    shape: &[usize],
    strides: [&[usize]; K],
    mut f: impl FnMut([usize; K], usize),
) {
    if shape.is_empty() {
        f([0; K], 1);
        return;
    }
    if shape.iter().any(|&d| d == 0) {
        return;
    }
    let rank = shape.len();
    let row = shape[rank - 1];
    let outer = &shape[..rank - 1];
    let mut idx = vec![0usize; outer.len()];
    let mut offs = [0usize; K];
    loop {
        f(offs, row);
        // odometer increment over the outer axes
        let mut axis = outer.len();
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            for k in 0..K {
                offs[k] += strides[k][axis];
            }
            if idx[axis] < outer[axis] {
                break;
            }
            for k in 0..K {
                offs[k] -= strides[k][axis] * outer[axis];
            }
            idx[axis] = 0;
        }
    }
}
