use crate::autograd::Backward;
use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::ops::{add, reshape};
use crate::tensor::Tensor;

fn dims2(op: &'static str, t: &Tensor<impl Element>) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(shape_err(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

struct MatMulOp {
    ta: bool,
    tb: bool,
}

impl<T: Element> Backward<T> for MatMulOp {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let (ga, gb) = match (self.ta, self.tb) {
            (false, false) => (
                a.requires_grad_flag().then(|| matmul_t(g, false, b, true)),
                b.requires_grad_flag().then(|| matmul_t(a, true, g, false)),
            ),
            (true, false) => (
                a.requires_grad_flag().then(|| matmul_t(b, false, g, true)),
                b.requires_grad_flag().then(|| matmul_t(a, false, g, false)),
            ),
            (false, true) => (
                a.requires_grad_flag().then(|| matmul_t(g, false, b, false)),
                b.requires_grad_flag().then(|| matmul_t(g, true, a, false)),
            ),
            (true, true) => (
                a.requires_grad_flag().then(|| matmul_t(b, true, g, true)),
                b.requires_grad_flag().then(|| matmul_t(g, true, a, true)),
            ),
        };
        Ok(vec![ga.transpose()?, gb.transpose()?])
    }
}

/// `op(a) · op(b)` where `op` optionally transposes its matrix argument.
pub fn matmul_t<T: Element>(a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool) -> Result<Tensor<T>> {
    let (ar, ac) = dims2("matmul", a)?;
    let (br, bc) = dims2("matmul", b)?;
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(shape_err(
            "matmul",
            format!(
                "inner dimensions differ: {:?}{} · {:?}{}",
                a.shape(),
                if ta { "ᵀ" } else { "" },
                b.shape(),
                if tb { "ᵀ" } else { "" }
            ),
        ));
    }
    let mut out = vec![T::zero(); m * n];
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    if m > 0 && n > 0 && k > 0 {
        // SAFETY: strides describe the row-major buffers whose sizes were checked above.
        unsafe {
            T::gemm(
                m,
                k,
                n,
                a.data().as_ptr(),
                rsa,
                csa,
                b.data().as_ptr(),
                rsb,
                csb,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Ok(Tensor::from_op(vec![m, n], out, MatMulOp { ta, tb }, &[a, b]))
}

pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul_t(a, false, b, false)
}

/// Affine map `x·W + b` for `x: N×D`, `W: D×K`, `b: K`.
pub fn linear<T: Element>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = dims2("linear", weight)?;
    if bias.shape() != [k] {
        return Err(shape_err(
            "linear",
            format!("bias {:?} does not match weight {:?}", bias.shape(), weight.shape()),
        ));
    }
    let y = matmul(x, weight)?;
    add(&y, &reshape(bias, &[1, k])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_variants_agree() {
        let a = Tensor::<f64>::from_f64s(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::<f64>::from_f64s(&[3, 2], &[1.0, -1.0, 0.5, 2.0, -3.0, 1.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.to_vec(), vec![-7.0, 6.0, -11.5, 12.0]);
        let at = crate::ops::permute(&a, &[1, 0]).unwrap();
        let bt = crate::ops::permute(&b, &[1, 0]).unwrap();
        assert_eq!(matmul_t(&at, true, &b, false).unwrap().to_vec(), c.to_vec());
        assert_eq!(matmul_t(&a, false, &bt, true).unwrap().to_vec(), c.to_vec());
        assert_eq!(matmul_t(&at, true, &bt, true).unwrap().to_vec(), c.to_vec());
    }

    #[test]
    fn linear_examples() {
        let x = Tensor::<f32>::from_slice(&[1, 2], &[1.0, 2.0]).unwrap();
        let w = Tensor::<f32>::from_slice(&[2, 1], &[1.0, 1.0]).unwrap();
        let b = Tensor::<f32>::from_slice(&[1], &[3.0]).unwrap();
        assert_eq!(linear(&x, &w, &b).unwrap().to_vec(), vec![6.0]);

        let x = Tensor::<f32>::from_slice(&[2, 2], &[1.0, -2.0, 0.5, 4.0]).unwrap();
        let eye = Tensor::<f32>::from_slice(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero = Tensor::<f32>::zeros(&[2]);
        assert_eq!(linear(&x, &eye, &zero).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn mismatched_inner_dims() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matmul(&a, &b).is_err());
    }
}
