use std::collections::HashMap;

use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// One SGD-with-momentum update: `v ← momentum·v + g`, `p ← p − lr·v`.
///
/// Returns the new parameter (a leaf if `param` was one) and the new velocity.
pub fn sgd_momentum_step<T: Element>(
    param: &Tensor<T>,
    grad: &Tensor<T>,
    velocity: &Tensor<T>,
    lr: T,
    momentum: T,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(shape_err(
            "sgd_momentum_step",
            format!(
                "param {:?}, grad {:?}, velocity {:?}",
                param.shape(),
                grad.shape(),
                velocity.shape()
            ),
        ));
    }
    let v: Vec<T> = velocity
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| momentum * v + g)
        .collect();
    let p: Vec<T> = param.data().iter().zip(&v).map(|(&p, &v)| p - lr * v).collect();
    let new_p = Tensor::from_vec(param.shape(), p)?;
    let new_p = if param.requires_grad_flag() {
        new_p.requires_grad()
    } else {
        new_p
    };
    Ok((new_p, Tensor::from_vec(param.shape(), v)?))
}

/// SGD with momentum keeping one velocity buffer per parameter name.
#[derive(Debug, Clone)]
pub struct SgdMomentum<T: Element> {
    pub lr: T,
    pub momentum: T,
    velocity: HashMap<String, Tensor<T>>,
}

impl<T: Element> SgdMomentum<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Self {
            lr,
            momentum,
            velocity: HashMap::new(),
        }
    }

    /// Updates `param` in place with `grad`, creating a zero velocity on first use.
    pub fn step(&mut self, name: &str, param: &mut Tensor<T>, grad: &Tensor<T>) -> Result<()> {
        let v = self
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(param.shape()));
        let (p, nv) = sgd_momentum_step(param, grad, v, self.lr, self.momentum)?;
        *param = p;
        *v = nv;
        Ok(())
    }

    pub fn velocity(&self, name: &str) -> Option<&Tensor<T>> {
        self.velocity.get(name)
    }
}
