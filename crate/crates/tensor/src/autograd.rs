//! Reverse-mode differentiation over the graph recorded by tensor ops.
//!
//! Every backward rule is written with the same differentiable ops used in
//! the forward pass, so running backward with `create_graph = true` records a
//! graph of the gradients themselves. That is what gradient matching needs:
//! a loss defined on parameter gradients, differentiated again with respect
//! to the input pixels.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops;
use crate::tensor::Tensor;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Disables graph recording on this thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(false));
        Self { prev }
    }
}

impl Default for NoGradGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

struct EnableGradGuard {
    prev: bool,
}

impl EnableGradGuard {
    fn new() -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(true));
        Self { prev }
    }
}

impl Drop for EnableGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Runs `f` without recording any graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = NoGradGuard::new();
    f()
}

pub(crate) trait Backward<T: Element>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients for each input, `None` where the input does not need one.
    fn backward(&self, inputs: &[Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>;
}

/// Leaf gradients produced by [`backward`], keyed by tensor identity.
pub struct Gradients<T: Element> {
    map: HashMap<u64, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&Tensor<T>> {
        self.map.get(&t.id())
    }

    /// Gradient of `t`, or zeros of its shape when the loss does not reach it.
    pub fn get_or_zeros(&self, t: &Tensor<T>) -> Tensor<T> {
        self.get(t).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()))
    }

    pub fn contains(&self, t: &Tensor<T>) -> bool {
        self.map.contains_key(&t.id())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Computes gradients of a scalar `loss` with respect to every leaf it reaches.
pub fn backward<T: Element>(loss: &Tensor<T>) -> Result<Gradients<T>> {
    let map = run(loss, &HashSet::new(), true, false)?;
    Ok(Gradients { map })
}

/// Gradients of `loss` with respect to `wrt` (leaves or intermediates).
///
/// Inputs the loss does not depend on get zeros. With `create_graph` the
/// returned tensors are themselves differentiable.
pub fn grad<T: Element>(loss: &Tensor<T>, wrt: &[&Tensor<T>], create_graph: bool) -> Result<Vec<Tensor<T>>> {
    let keep: HashSet<u64> = wrt.iter().map(|t| t.id()).collect();
    let map = run(loss, &keep, false, create_graph)?;
    Ok(wrt
        .iter()
        .map(|t| map.get(&t.id()).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

impl<T: Element> Tensor<T> {
    pub fn backward(&self) -> Result<Gradients<T>> {
        backward(self)
    }
}

/// Reverse topological order (root first) of the graph nodes reachable from `root`.
fn reverse_topo<T: Element>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut visited: HashSet<u64> = HashSet::new();
    let mut post: Vec<Tensor<T>> = Vec::new();
    // (tensor, next input index to visit)
    let mut stack: Vec<(Tensor<T>, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.id());
    while let Some((t, idx)) = stack.pop() {
        let inputs = t.node().map(|n| n.inputs.as_slice()).unwrap_or(&[]);
        if idx < inputs.len() {
            let child = inputs[idx].clone();
            stack.push((t, idx + 1));
            if child.requires_grad_flag() && visited.insert(child.id()) {
                stack.push((child, 0));
            }
        } else {
            post.push(t);
        }
    }
    post.reverse();
    post
}

fn run<T: Element>(
    root: &Tensor<T>,
    keep: &HashSet<u64>,
    keep_leaves: bool,
    create_graph: bool,
) -> Result<HashMap<u64, Tensor<T>>> {
    if root.numel() != 1 {
        return Err(TensorError::NonScalarRoot(root.shape().to_vec()));
    }
    if !root.requires_grad_flag() {
        return Err(TensorError::NoGraph);
    }
    let _mode: (Option<NoGradGuard>, Option<EnableGradGuard>) = if create_graph {
        (None, Some(EnableGradGuard::new()))
    } else {
        (Some(NoGradGuard::new()), None)
    };

    let order = reverse_topo(root);
    let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
    grads.insert(root.id(), Tensor::ones(root.shape()));
    let mut out: HashMap<u64, Tensor<T>> = HashMap::new();

    for t in &order {
        let keep_this = keep.contains(&t.id()) || (keep_leaves && t.is_leaf());
        let g = if keep_this {
            match grads.get(&t.id()) {
                Some(g) => {
                    out.insert(t.id(), g.clone());
                    g.clone()
                }
                None => continue,
            }
        } else {
            match grads.remove(&t.id()) {
                Some(g) => g,
                None => continue,
            }
        };
        let Some(node) = t.node() else { continue };
        let input_grads = node.op.backward(&node.inputs, t, &g)?;
        debug_assert_eq!(input_grads.len(), node.inputs.len());
        for (input, ig) in node.inputs.iter().zip(input_grads) {
            let Some(ig) = ig else { continue };
            if !input.requires_grad_flag() {
                continue;
            }
            if ig.shape() != input.shape() {
                return Err(crate::error::shape_err(
                    "backward",
                    format!(
                        "{} produced gradient {:?} for input {:?}",
                        node.op.name(),
                        ig.shape(),
                        input.shape()
                    ),
                ));
            }
            let merged = match grads.remove(&input.id()) {
                Some(prev) => ops::add(&prev, &ig)?,
                None => ig,
            };
            grads.insert(input.id(), merged);
        }
    }
    Ok(out)
}
